#pragma once

// Command-line front end. run_cli() is the whole program; tools/densfix.cpp
// only forwards main() to it.
//
//   densfix <subcommand> [--config FILE] [--seed N] [--out DIR] [--print-config]
//           [--section.key VALUE ...]
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
// Failures print one line to stderr:  error kind=<kind> message="<text>"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "densfix/asymptotics.hpp"
#include "densfix/config.hpp"
#include "densfix/experiments.hpp"
#include "densfix/priors.hpp"
#include "densfix/training.hpp"

namespace densfix {

namespace cli_detail {

inline const std::vector<std::pair<std::string, std::vector<std::string_view>>>& subcommands() {
    static const std::vector<std::pair<std::string, std::vector<std::string_view>>> s = {
        {"train", {"run", "data", "model", "train", "density_fixing"}},
        {"semisup", {"run", "data", "model", "train", "density_fixing", "semisup"}},
        {"kd", {"run", "data", "model", "train", "kd"}},
        {"gan", {"run", "gan"}},
        {"asymptotics", {"run", "asymptotics"}},
        {"curves", {"run", "curves"}},
        {"sweep", {"run", "data", "model", "train", "density_fixing", "sweep"}},
    };
    return s;
}

inline std::string subcommand_help(std::string_view name) {
    if (name == "train") return "supervised training with the density-fixing loss";
    if (name == "semisup") return "semi-supervised gap over a grid of gamma and seeds";
    if (name == "kd") return "teacher training followed by knowledge distillation";
    if (name == "gan") return "ring GAN with the discriminator prior term";
    if (name == "asymptotics") return "Monte Carlo variance of the penalized estimator";
    if (name == "curves") return "closed-form eta curves";
    if (name == "sweep") return "test error over a grid of gamma and seeds";
    return {};
}

inline std::string quote(std::string_view msg) {
    std::string out = "\"";
    for (char c : msg) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n' || c == '\r') {
            out += ' ';
            continue;
        }
        out += c;
    }
    return out + "\"";
}

inline void write_file(const std::filesystem::path& path, std::string_view content, std::ostream& log) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw Error("write failed for '" + path.string() + "'");
    log << "wrote " << path.string() << '\n';
}

inline std::vector<double> weights_or_balanced(const Config& c, std::string_view key) {
    const std::string v = c.get_string("data", key);
    if (v == "balanced") return {};
    return c.get_double_list("data", key);
}

// Typed views of the configuration. Invalid values surface as ConfigError.

inline DataConfig data_config(const Config& c) {
    DataConfig d;
    d.classes = c.get_size("data", "classes");
    d.n_train = c.get_size("data", "n_train");
    d.n_test = c.get_size("data", "n_test");
    d.dim = c.get_size("data", "dim");
    d.separation = c.get_double("data", "separation");
    d.noise_std = c.get_double("data", "noise_std");
    d.class_weights = weights_or_balanced(c, "class_weights");
    d.test_class_weights = c.get_string("data", "test_class_weights") == "train" ? d.class_weights
                                                                                  : weights_or_balanced(c, "test_class_weights");
    d.train_csv = c.get_string("data", "train_csv");
    d.test_csv = c.get_string("data", "test_csv");
    d.label_column = c.get_string("data", "label_column");
    if (d.classes < 2) throw ConfigError("data.classes must be >= 2");
    if (d.n_train < 1 || d.n_test < 1 || d.dim < 1) throw ConfigError("data.n_train, data.n_test and data.dim must be >= 1");
    if (!(d.noise_std >= 0.0)) throw ConfigError("data.noise_std must be >= 0");
    for (const auto* w : {&d.class_weights, &d.test_class_weights}) {
        if (!w->empty() && w->size() != d.classes) throw ConfigError("data: class weight lists need one entry per class");
    }
    return d;
}

inline ModelConfig model_config(const Config& c, std::string_view section = "model", std::string_view key = "hidden") {
    ModelConfig m;
    const std::string h = c.get_string(section, key);
    m.hidden = (h == "none" || h.empty()) ? std::vector<std::size_t>{} : c.get_size_list(section, key);
    for (std::size_t w : m.hidden) {
        if (w == 0) throw ConfigError(std::string(section) + "." + std::string(key) + ": zero-width layer");
    }
    m.activation = parse_activation(c.get_string("model", "activation"));
    return m;
}

inline TrainConfig train_config(const Config& c, bool with_df) {
    TrainConfig t;
    t.epochs = c.get_size("train", "epochs");
    t.batch_size = c.get_size("train", "batch_size");
    t.learning_rate = c.get_double("train", "learning_rate");
    t.optimizer = parse_optimizer(c.get_string("train", "optimizer"));
    t.momentum = c.get_double("train", "momentum");
    t.eval_every = c.get_size("train", "eval_every");
    t.seed = c.get_u64("run", "seed");
    if (with_df) {
        t.df.gamma = c.get_double("density_fixing", "gamma");
        t.df.mode = parse_df_mode(c.get_string("density_fixing", "mode"));
        t.df.prior = parse_prior_spec(c.get_string("density_fixing", "prior"));
    } else {
        t.df.gamma = 0.0;
    }
    t.validate();
    return t;
}

inline std::vector<double> gamma_list(const Config& c, std::string_view section) {
    auto g = c.get_double_list(section, "gammas");
    for (double x : g) {
        if (!(x >= 0.0)) throw ConfigError(std::string(section) + ".gammas must be >= 0");
    }
    return g;
}

inline std::size_t seed_count(const Config& c, std::string_view section) {
    const std::size_t n = c.get_size(section, "seeds");
    if (n < 1) throw ConfigError(std::string(section) + ".seeds must be >= 1");
    return n;
}

struct Context {
    const Config& cfg;
    std::filesystem::path out;
    std::uint64_t seed;
    std::ostream& log;
};

// Each command resolves its configuration first (config errors, exit 2) and
// returns the work to run (runtime errors, exit 1).
using Work = std::function<void()>;

inline Work cmd_train(const Context& ctx) {
    const auto data = data_config(ctx.cfg);
    const auto model = model_config(ctx.cfg);
    const auto train = train_config(ctx.cfg, true);
    return [=] {
        const TrainTest tt = make_train_test(data, ctx.seed);
        ModelParams m = make_model(model, tt.train.dim(), tt.train.num_classes, ctx.seed);
        const auto report = train_supervised(m, tt.train, tt.test, train);
        write_file(ctx.out / "report.csv", report.to_csv(), ctx.log);
        write_file(ctx.out / "summary.json", report.summary().dump(2) + "\n", ctx.log);
    };
}

inline Work cmd_semisup(const Context& ctx) {
    const auto data = data_config(ctx.cfg);
    const auto model = model_config(ctx.cfg);
    auto train = train_config(ctx.cfg, true);
    train.reg_pool = parse_reg_pool(ctx.cfg.get_string("semisup", "reg_pool"));
    const double fraction = ctx.cfg.get_double("semisup", "labeled_fraction");
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("semisup.labeled_fraction must lie in (0, 1)");
    const auto gammas = gamma_list(ctx.cfg, "semisup");
    const auto seeds = seed_range(ctx.seed, seed_count(ctx.cfg, "semisup"));
    return [=] {
        const auto rows = run_semisup_grid(data, model, train, fraction, gammas, seeds);
        const auto means = mean_by_gamma(rows);
        write_file(ctx.out / "semisup_gap.csv", semisup_to_csv(rows), ctx.log);
        write_file(ctx.out / "semisup_means.csv", gamma_means_to_csv(means), ctx.log);
        Json s{{"seed", ctx.seed}, {"labeled_fraction", fraction}, {"config", to_json(train)}};
        if (means.size() >= 2) s["spearman_gamma_gap"] = gap_trend(means);
        write_file(ctx.out / "summary.json", s.dump(2) + "\n", ctx.log);
    };
}

inline Work cmd_kd(const Context& ctx) {
    const auto data = data_config(ctx.cfg);
    const auto student_cfg = model_config(ctx.cfg);
    const auto teacher_cfg = model_config(ctx.cfg, "kd", "teacher_hidden");
    auto train = train_config(ctx.cfg, false);
    train.kd.alpha = ctx.cfg.get_double("kd", "alpha");
    train.kd.temperature = ctx.cfg.get_double("kd", "temperature");
    train.validate();
    TrainConfig teacher_train = train;
    teacher_train.epochs = ctx.cfg.get_size("kd", "teacher_epochs");
    teacher_train.seed = derive_seed(ctx.seed, stream::kTeacher);
    teacher_train.validate();
    return [=] {
        const TrainTest tt = make_train_test(data, ctx.seed);
        ModelParams teacher = make_model(teacher_cfg, tt.train.dim(), tt.train.num_classes, teacher_train.seed);
        const auto teacher_report = train_supervised(teacher, tt.train, tt.test, teacher_train);
        ModelParams student = make_model(student_cfg, tt.train.dim(), tt.train.num_classes, ctx.seed);
        const auto report = train_kd(student, teacher, tt.train, tt.test, train);
        write_file(ctx.out / "teacher_report.csv", teacher_report.to_csv(), ctx.log);
        write_file(ctx.out / "report.csv", report.to_csv(), ctx.log);
        Json s = report.summary();
        s["teacher"] = teacher_report.summary()["final"];
        write_file(ctx.out / "summary.json", s.dump(2) + "\n", ctx.log);
    };
}

inline Work cmd_gan(const Context& ctx) {
    const Config& c = ctx.cfg;
    RingConfig ring;
    ring.modes = c.get_size("gan", "modes");
    ring.n = c.get_size("gan", "n");
    ring.radius = c.get_double("gan", "radius");
    ring.sigma = c.get_double("gan", "sigma");
    ring.latent_dim = c.get_size("gan", "latent_dim");
    ring.hidden = c.get_size("gan", "hidden");
    if (ring.modes < 2 || ring.n < 1 || ring.latent_dim < 1 || ring.hidden < 1) throw ConfigError("gan: modes >= 2, n, latent_dim and hidden >= 1 required");
    if (!(ring.radius > 0.0) || !(ring.sigma >= 0.0)) throw ConfigError("gan: radius must be > 0 and sigma >= 0");
    GanConfig g;
    g.epochs = c.get_size("gan", "epochs");
    g.batch_size = c.get_size("gan", "batch_size");
    g.learning_rate = c.get_double("gan", "learning_rate");
    g.optimizer = parse_optimizer(c.get_string("gan", "optimizer"));
    g.momentum = c.get_double("gan", "momentum");
    g.prior_xi = c.get_double("gan", "prior_xi");
    g.snapshot_every = c.get_size("gan", "snapshot_every");
    g.snapshot_points = c.get_size("gan", "snapshot_points");
    g.coverage_threshold = c.get_double("gan", "coverage_threshold");
    g.validate();
    const auto gammas = gamma_list(c, "gan");
    const auto seeds = seed_range(ctx.seed, seed_count(c, "gan"));
    return [=] {
        std::ostringstream cov;
        cov << "gamma,seed,final_coverage,epochs_mean_d_in_band,final_mean_d,final_d_loss,final_g_loss\n";
        for (double gamma : gammas) {
            for (std::uint64_t seed : seeds) {
                const auto report = run_gan(ring, g, gamma, seed);
                const auto dir = ctx.out / ("gamma_" + shortest_double(gamma) + "_seed_" + std::to_string(seed));
                write_file(dir / "history.csv", report.to_csv(), ctx.log);
                for (const auto& snap : report.snapshots) {
                    write_file(dir / ("snapshot_epoch_" + std::to_string(snap.epoch) + ".txt"), snap.to_text(), ctx.log);
                }
                const auto& last = report.rows.back();
                cov << format_double(gamma) << ',' << seed << ',' << report.final_coverage() << ',' << report.epochs_in_band() << ','
                    << format_double(last.mean_d) << ',' << format_double(last.d_loss) << ',' << format_double(last.g_loss) << '\n';
            }
        }
        write_file(ctx.out / "gan_coverage.csv", cov.str(), ctx.log);
    };
}

inline Work cmd_asymptotics(const Context& ctx) {
    const Config& c = ctx.cfg;
    AsymptoticsConfig a;
    a.family = parse_family(c.get_string("asymptotics", "family"));
    a.n_grid = c.get_size_list("asymptotics", "n_grid");
    a.replicas = c.get_size("asymptotics", "replicas");
    a.regularized = parse_variants(c.get_string("asymptotics", "regularized"));
    a.prior_source = parse_prior_source(c.get_string("asymptotics", "prior_source"));
    a.penalty = parse_penalty_scale(c.get_string("asymptotics", "penalty"));
    a.threads = c.get_size("asymptotics", "threads");
    a.seed = ctx.seed;
    a.validate();
    return [=] { write_file(ctx.out / "variance_curve.csv", variance_rows_to_csv(simulate_variance_curve(a)), ctx.log); };
}

inline Work cmd_curves(const Context& ctx) {
    const Config& c = ctx.cfg;
    const std::size_t k_min = c.get_size("curves", "k_min"), k_max = c.get_size("curves", "k_max");
    const double xi_min = c.get_double("curves", "xi_min"), xi_max = c.get_double("curves", "xi_max");
    const std::size_t points = c.get_size("curves", "xi_points");
    if (k_min < 2 || k_max < k_min) throw ConfigError("curves: need 2 <= k_min <= k_max");
    if (!(xi_min > 0.0 && xi_max < 1.0 && xi_min <= xi_max) || points < 1) throw ConfigError("curves: need 0 < xi_min <= xi_max < 1 and xi_points >= 1");
    return [=] {
        const auto grid = linear_grid(xi_min, xi_max, points);
        const auto curves = emit_eta_curves(k_min, k_max, grid);
        std::ostringstream u, b;
        u << "K,eta\n";
        for (const auto& [k, eta] : curves.uniform) u << k << ',' << format_double(eta) << '\n';
        b << "xi,eta\n";
        for (const auto& [xi, eta] : curves.bernoulli) b << format_double(xi) << ',' << format_double(eta) << '\n';
        write_file(ctx.out / "eta_uniform.csv", u.str(), ctx.log);
        write_file(ctx.out / "eta_bernoulli.csv", b.str(), ctx.log);
    };
}

inline Work cmd_sweep(const Context& ctx) {
    const auto data = data_config(ctx.cfg);
    const auto model = model_config(ctx.cfg);
    const auto train = train_config(ctx.cfg, true);
    const auto gammas = gamma_list(ctx.cfg, "sweep");
    const auto seeds = seed_range(ctx.seed, seed_count(ctx.cfg, "sweep"));
    return [=] {
        const auto rows = run_sweep_grid(data, model, train, gammas, seeds);
        write_file(ctx.out / "sweep.csv", sweep_to_csv(rows), ctx.log);
        write_file(ctx.out / "sweep_means.csv", gamma_means_to_csv(mean_by_gamma(rows)), ctx.log);
    };
}

inline std::string error_kind(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const ShapeError*>(&e)) return "shape";
    if (dynamic_cast<const AbsoluteContinuityError*>(&e)) return "absolute_continuity";
    if (dynamic_cast<const DomainError*>(&e)) return "domain";
    if (dynamic_cast<const DivergenceError*>(&e)) return "divergence";
    if (dynamic_cast<const NonFiniteError*>(&e)) return "non_finite";
    if (dynamic_cast<const CsvError*>(&e)) return "csv";
    if (dynamic_cast<const InvalidArgument*>(&e)) return "invalid_argument";
    return "runtime";
}

} // namespace cli_detail

inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    using namespace cli_detail;
    CLI::App app{"density-fixing experiments", "densfix"};
    app.require_subcommand(1);
    struct Opts {
        std::string config;
        std::optional<std::uint64_t> seed;
        std::optional<std::string> out;
        bool print_config = false;
    };
    std::vector<Opts> opts(subcommands().size());
    std::vector<CLI::App*> subs;
    for (std::size_t i = 0; i < subcommands().size(); ++i) {
        auto* s = app.add_subcommand(subcommands()[i].first, subcommand_help(subcommands()[i].first));
        s->add_option("--config", opts[i].config, "configuration file");
        s->add_option("--seed", opts[i].seed, "master seed (overrides run.seed)");
        s->add_option("--out", opts[i].out, "output directory (overrides run.out)");
        s->add_flag("--print-config", opts[i].print_config, "print the resolved configuration before running");
        s->allow_extras();
        s->footer("Any key can be overridden with --section.key VALUE.");
        subs.push_back(s);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error kind=usage message=" << quote(e.what()) << '\n';
        return 2;
    }

    std::size_t which = 0;
    while (!subs[which]->parsed()) ++which;
    const Opts& o = opts[which];
    const auto& [name, sections] = subcommands()[which];

    Work work;
    std::optional<Config> cfg;
    try {
        try {
            cfg = o.config.empty() ? Config() : Config::from_file(o.config);
            const auto extras = subs[which]->remaining();
            for (std::size_t i = 0; i < extras.size(); ++i) {
                std::string_view a = extras[i];
                if (!a.starts_with("--")) throw ConfigError("unexpected argument '" + std::string(a) + "'");
                a.remove_prefix(2);
                const auto eq = a.find('=');
                if (eq != std::string_view::npos) {
                    cfg->set(a.substr(0, eq), std::string(a.substr(eq + 1)));
                } else {
                    if (i + 1 >= extras.size()) throw ConfigError("missing value for '--" + std::string(a) + "'");
                    cfg->set(a, extras[++i]);
                }
            }
            if (o.seed) cfg->set("run.seed", std::to_string(*o.seed));
            if (o.out) cfg->set("run.out", *o.out);
            if (o.print_config) out << cfg->dump(sections) << std::flush;

            const Context ctx{*cfg, cfg->get_string("run", "out"), cfg->get_u64("run", "seed"), out};
            if (name == "train") work = cmd_train(ctx);
            else if (name == "semisup") work = cmd_semisup(ctx);
            else if (name == "kd") work = cmd_kd(ctx);
            else if (name == "gan") work = cmd_gan(ctx);
            else if (name == "asymptotics") work = cmd_asymptotics(ctx);
            else if (name == "curves") work = cmd_curves(ctx);
            else work = cmd_sweep(ctx);
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            // Bad values caught by library validation while resolving the config.
            throw ConfigError(e.what());
        }
    } catch (const std::exception& e) {
        err << "error kind=config message=" << quote(e.what()) << '\n';
        return 2;
    }

    try {
        work();
    } catch (const std::exception& e) {
        err << "error kind=" << error_kind(e) << " message=" << quote(e.what()) << '\n';
        return 1;
    }
    return 0;
}

} // namespace densfix
