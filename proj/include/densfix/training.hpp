#pragma once

// Training loops for the supervised, semi-supervised, distillation and GAN
// experiments. All loops are single-threaded SGD and fully determined by the
// configuration and seed: every consumer of randomness draws from its own
// stream derived from TrainConfig::seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "densfix/autodiff.hpp"
#include "densfix/data.hpp"
#include "densfix/errors.hpp"
#include "densfix/losses.hpp"
#include "densfix/metrics.hpp"
#include "densfix/models.hpp"
#include "densfix/priors.hpp"
#include "densfix/rng.hpp"

namespace densfix {

using Json = nlohmann::ordered_json;

// Sub-stream indices under a run seed.
namespace stream {
inline constexpr std::uint64_t kInit = 0;
inline constexpr std::uint64_t kBatches = 1;
inline constexpr std::uint64_t kUnlabeled = 2;
inline constexpr std::uint64_t kLatent = 3;
inline constexpr std::uint64_t kSnapshot = 4;
inline constexpr std::uint64_t kData = 5;
inline constexpr std::uint64_t kTestData = 6;
inline constexpr std::uint64_t kSplit = 7;
inline constexpr std::uint64_t kTeacher = 8;
} // namespace stream

enum class OptimizerKind { Sgd, Momentum };

inline std::string_view to_string(OptimizerKind o) { return o == OptimizerKind::Sgd ? "sgd" : "momentum"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "momentum") return OptimizerKind::Momentum;
    throw InvalidArgument("optimizer must be sgd or momentum, got '" + std::string(s) + "'");
}

// Which predictions the semi-supervised KL term averages over.
enum class RegPool { Unlabeled, All };

inline std::string_view to_string(RegPool p) { return p == RegPool::Unlabeled ? "unlabeled" : "all"; }

inline RegPool parse_reg_pool(std::string_view s) {
    if (s == "unlabeled") return RegPool::Unlabeled;
    if (s == "all") return RegPool::All;
    throw InvalidArgument("reg_pool must be unlabeled or all, got '" + std::string(s) + "'");
}

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    OptimizerKind optimizer = OptimizerKind::Momentum;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    DensityFixingConfig df;
    std::size_t eval_every = 1;  // the final epoch is always evaluated
    RegPool reg_pool = RegPool::Unlabeled;
    KDConfig kd;

    void validate() const {
        if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
        if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidArgument("learning_rate must be > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
        if (eval_every < 1) throw InvalidArgument("eval_every must be >= 1");
        df.validate();
        kd.validate();
    }
};

inline Json to_json(const TrainConfig& c) {
    return Json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"optimizer", to_string(c.optimizer)},
                {"momentum", c.momentum},
                {"seed", c.seed},
                {"gamma", c.df.gamma},
                {"df_mode", to_string(c.df.mode)},
                {"prior", to_string(c.df.prior)},
                {"eval_every", c.eval_every},
                {"reg_pool", to_string(c.reg_pool)},
                {"kd_alpha", c.kd.alpha},
                {"kd_temperature", c.kd.temperature}};
}

// ---------------------------------------------------------------------------
// Reports

struct EpochRow {
    std::size_t epoch = 0;
    double train_loss = 0;
    double test_loss = 0;
    double train_err = 0;
    double test_err = 0;
    double top5_err = 0;
    double reg_term = 0;
    double gap = 0;  // test_loss - train_loss

    bool operator==(const EpochRow&) const = default;
};

inline constexpr std::string_view kReportCsvHeader = "epoch,train_loss,test_loss,train_err,test_err,top5_err,reg_term,gap";

struct ExperimentReport {
    std::vector<EpochRow> rows;
    Json config;
    std::uint64_t seed = 0;

    const EpochRow& final_row() const {
        if (rows.empty()) throw Error("ExperimentReport: no rows");
        return rows.back();
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << kReportCsvHeader << '\n';
        for (const auto& r : rows) {
            os << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.test_loss) << ','
               << format_double(r.train_err) << ',' << format_double(r.test_err) << ',' << format_double(r.top5_err) << ','
               << format_double(r.reg_term) << ',' << format_double(r.gap) << '\n';
        }
        return os.str();
    }

    Json summary() const {
        const auto& f = final_row();
        double best = f.test_err;
        std::size_t best_epoch = f.epoch;
        for (const auto& r : rows) {
            if (r.test_err < best) {
                best = r.test_err;
                best_epoch = r.epoch;
            }
        }
        return Json{{"seed", seed},
                    {"config", config},
                    {"final",
                     {{"epoch", f.epoch},
                      {"train_loss", f.train_loss},
                      {"test_loss", f.test_loss},
                      {"train_err", f.train_err},
                      {"test_err", f.test_err},
                      {"top5_err", f.top5_err},
                      {"reg_term", f.reg_term},
                      {"gap", f.gap}}},
                    {"best_test_err", best},
                    {"best_epoch", best_epoch}};
    }

    bool operator==(const ExperimentReport& o) const { return rows == o.rows && config == o.config && seed == o.seed; }
};

// ---------------------------------------------------------------------------
// Optimizer

/// Plain SGD, or SGD with heavy-ball momentum: v <- mu v + g; theta <- theta - lr v.
class SgdOptimizer {
public:
    SgdOptimizer(OptimizerKind kind, double learning_rate, double momentum)
        : kind_(kind), lr_(learning_rate), mu_(momentum) {}

    // grads are ordered as the parameters of `bound`: weights then bias, layer by layer.
    void step(ModelParams& p, const BoundParams& bound) {
        if (velocity_.empty()) {
            for (const auto& l : p.layers) {
                velocity_.emplace_back(l.weight.size(), 0.0);
                velocity_.emplace_back(l.bias.size(), 0.0);
            }
        }
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            update(p.layers[l].weight, bound.weights[l].grad(), velocity_[2 * l]);
            update(p.layers[l].bias, bound.biases[l].grad(), velocity_[2 * l + 1]);
        }
    }

private:
    void update(Tensor& param, const Tensor& grad, std::vector<double>& v) {
        auto w = param.values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            double d = grad[i];
            if (kind_ == OptimizerKind::Momentum) {
                v[i] = mu_ * v[i] + d;
                d = v[i];
            }
            w[i] -= lr_ * d;
            if (!std::isfinite(w[i])) throw DivergenceError("optimizer step produced a non-finite parameter");
        }
    }

    OptimizerKind kind_;
    double lr_;
    double mu_;
    std::vector<std::vector<double>> velocity_;
};

// Shuffled minibatches, one pass per epoch; the last batch may be short.
class EpochBatches {
public:
    EpochBatches(std::size_t n, std::size_t batch_size, std::uint64_t seed) : n_(n), batch_(batch_size), rng_(seed) {}

    std::vector<std::vector<std::size_t>> next_epoch() {
        std::vector<std::size_t> order(n_);
        for (std::size_t i = 0; i < n_; ++i) order[i] = i;
        rng_.shuffle(std::span(order));
        std::vector<std::vector<std::size_t>> batches;
        for (std::size_t s = 0; s < n_; s += batch_) {
            batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(n_, s + batch_)));
        }
        return batches;
    }

private:
    std::size_t n_, batch_;
    Rng rng_;
};

// Endless stream of minibatches cycling through reshuffled passes.
class CyclingBatches {
public:
    CyclingBatches(std::size_t n, std::size_t batch_size, std::uint64_t seed) : n_(n), batch_(std::min(batch_size, n)), rng_(seed) {}

    std::vector<std::size_t> next() {
        std::vector<std::size_t> out;
        out.reserve(batch_);
        while (out.size() < batch_) {
            if (pos_ == order_.size()) reshuffle();
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    void reshuffle() {
        order_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
        rng_.shuffle(std::span(order_));
        pos_ = 0;
    }

    std::size_t n_, batch_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

// Called after every parameter update with the global step index (from 1).
using StepObserver = std::function<void(std::size_t step, const ModelParams&)>;

namespace detail {

inline Labels gather_labels(const Labels& y, std::span<const std::size_t> idx) {
    Labels out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(y[i]);
    return out;
}

inline double checked_loss(const ad::Var& loss) {
    const double v = loss.value().item();
    if (!std::isfinite(v)) throw DivergenceError("training loss became non-finite");
    return v;
}

// Runs `body` and converts numeric failures inside it into DivergenceError.
template <typename F>
auto guard_divergence(std::size_t epoch, F&& body) {
    try {
        return body();
    } catch (const NonFiniteError& e) {
        throw DivergenceError("diverged in epoch " + std::to_string(epoch) + ": " + e.what());
    } catch (const DivergenceError& e) {
        throw DivergenceError("diverged in epoch " + std::to_string(epoch) + ": " + e.what());
    }
}

// KL(marginal prediction over `inputs` || prior); NaN if undefined.
inline double marginal_kl(const ModelParams& m, const Tensor& inputs, const CategoricalPrior& prior) {
    const auto marg = column_means(softmax_rows(mlp_predict(m, inputs)));
    try {
        return kl_divergence(marg, prior.probs());
    } catch (const AbsoluteContinuityError&) {
        return std::nan("");
    }
}

inline EpochRow evaluate(std::size_t epoch, const ModelParams& m, const Dataset& train, const Dataset& test, double reg_term) {
    const Tensor train_logits = mlp_predict(m, train.inputs);
    const Tensor test_logits = mlp_predict(m, test.inputs);
    const Labels& ytr = train.require_labels();
    const Labels& yte = test.require_labels();
    EpochRow r;
    r.epoch = epoch;
    r.train_loss = mean_cross_entropy(train_logits, ytr);
    r.test_loss = mean_cross_entropy(test_logits, yte);
    r.train_err = empirical_error(train_logits, ytr);
    r.test_err = empirical_error(test_logits, yte);
    r.top5_err = topk_error(test_logits, yte, std::min<std::size_t>(5, test_logits.cols()));
    r.reg_term = reg_term;
    r.gap = r.test_loss - r.train_loss;
    return r;
}

inline bool should_evaluate(std::size_t epoch, const TrainConfig& cfg) {
    return epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
}

inline void check_compatible(const ModelParams& m, const Dataset& d, std::string_view what) {
    if (d.dim() != m.input_dim()) throw ShapeError(std::string(what) + ": data width does not match model input");
    if (d.num_classes != m.output_dim()) throw ShapeError(std::string(what) + ": class count does not match model output");
}

} // namespace detail

// ---------------------------------------------------------------------------
// Supervised

/// Minibatch SGD on the density-fixing loss. reg_term in the report is
/// D[marginal prediction over the training inputs || prior].
inline ExperimentReport train_supervised(ModelParams& model, const Dataset& train, const Dataset& test, const TrainConfig& cfg,
                                         const StepObserver& observer = {}) {
    cfg.validate();
    model.validate();
    detail::check_compatible(model, train, "train_supervised");
    detail::check_compatible(model, test, "train_supervised");
    const Labels& y = train.require_labels();
    const CategoricalPrior prior = resolve_prior(cfg.df.prior, train.num_classes, y);

    ExperimentReport report;
    report.config = to_json(cfg);
    report.seed = cfg.seed;
    SgdOptimizer opt(cfg.optimizer, cfg.learning_rate, cfg.momentum);
    EpochBatches batches(train.size(), cfg.batch_size, derive_seed(cfg.seed, stream::kBatches));
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        detail::guard_divergence(epoch, [&] {
            for (const auto& idx : batches.next_epoch()) {
                ad::Graph g;
                const BoundParams bound = bind(g, model);
                const Labels targets = detail::gather_labels(y, idx);
                ad::Var logits = mlp_forward(model, bound, g.constant(train.inputs.gather_rows(idx)));
                ad::Var loss = density_fixing_loss(logits, targets, prior, cfg.df);
                detail::checked_loss(loss);
                g.backward(loss);
                opt.step(model, bound);
                if (observer) observer(++step, model);
            }
            return 0;
        });
        if (detail::should_evaluate(epoch, cfg)) {
            report.rows.push_back(detail::evaluate(epoch, model, train, test, detail::marginal_kl(model, train.inputs, prior)));
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Semi-supervised

/// Each step draws one labeled and one unlabeled minibatch from independent
/// streams. Loss: CE on the labeled batch + gamma * KL of the prediction
/// marginal over the unlabeled batch (or labeled + unlabeled when reg_pool is
/// `all`). The unlabeled set's labels, if any, are never read. reg_term in
/// the report is the marginal KL over the whole unlabeled set.
inline ExperimentReport train_semi_supervised(ModelParams& model, const Dataset& labeled, const Dataset& unlabeled,
                                              const Dataset& test, const TrainConfig& cfg, const StepObserver& observer = {}) {
    cfg.validate();
    model.validate();
    detail::check_compatible(model, labeled, "train_semi_supervised");
    detail::check_compatible(model, test, "train_semi_supervised");
    if (unlabeled.dim() != model.input_dim()) throw ShapeError("train_semi_supervised: unlabeled width mismatch");
    if (unlabeled.size() == 0) throw InvalidArgument("train_semi_supervised: empty unlabeled set");
    const Labels& y = labeled.require_labels();
    const CategoricalPrior prior = resolve_prior(cfg.df.prior, labeled.num_classes, y);
    if (cfg.df.gamma > 0.0 && cfg.df.mode == DfMode::Marginal && !prior.strictly_positive()) {
        throw AbsoluteContinuityError("train_semi_supervised: marginal mode needs a strictly positive prior");
    }

    ExperimentReport report;
    report.config = to_json(cfg);
    report.seed = cfg.seed;
    SgdOptimizer opt(cfg.optimizer, cfg.learning_rate, cfg.momentum);
    EpochBatches batches(labeled.size(), cfg.batch_size, derive_seed(cfg.seed, stream::kBatches));
    CyclingBatches unl_batches(unlabeled.size(), cfg.batch_size, derive_seed(cfg.seed, stream::kUnlabeled));
    const Tensor prior_vec = Tensor::vector(prior.vec());
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        detail::guard_divergence(epoch, [&] {
            for (const auto& idx : batches.next_epoch()) {
                const auto uidx = unl_batches.next();
                ad::Graph g;
                const BoundParams bound = bind(g, model);
                const Labels targets = detail::gather_labels(y, idx);
                ad::Var logits = mlp_forward(model, bound, g.constant(labeled.inputs.gather_rows(idx)));
                ad::Var loss = cross_entropy(logits, targets);
                if (cfg.df.gamma > 0.0) {
                    ad::Var u_probs = ad::softmax(mlp_forward(model, bound, g.constant(unlabeled.inputs.gather_rows(uidx))));
                    ad::Var reg;
                    if (cfg.df.mode == DfMode::Marginal) {
                        ad::Var marg = marginal_prediction(u_probs);
                        if (cfg.reg_pool == RegPool::All) {
                            const double nl = static_cast<double>(idx.size()), nu = static_cast<double>(uidx.size());
                            marg = ad::scalar_mul(marginal_prediction(ad::softmax(logits)), nl / (nl + nu)) +
                                   ad::scalar_mul(marg, nu / (nl + nu));
                        }
                        reg = kl_divergence(marg, prior);
                    } else {
                        reg = mean_row_kl(u_probs, prior_vec);
                        if (cfg.reg_pool == RegPool::All) {
                            const double nl = static_cast<double>(idx.size()), nu = static_cast<double>(uidx.size());
                            reg = ad::scalar_mul(mean_row_kl(ad::softmax(logits), prior_vec), nl / (nl + nu)) +
                                  ad::scalar_mul(reg, nu / (nl + nu));
                        }
                    }
                    loss = loss + cfg.df.gamma * reg;
                }
                detail::checked_loss(loss);
                g.backward(loss);
                opt.step(model, bound);
                if (observer) observer(++step, model);
            }
            return 0;
        });
        if (detail::should_evaluate(epoch, cfg)) {
            report.rows.push_back(detail::evaluate(epoch, model, labeled, test, detail::marginal_kl(model, unlabeled.inputs, prior)));
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Knowledge distillation

/// Trains `student` on the distillation loss against a frozen teacher.
/// reg_term in the report is the mean per-sample D[student || teacher] on the
/// training inputs.
inline ExperimentReport train_kd(ModelParams& student, const ModelParams& teacher, const Dataset& train, const Dataset& test,
                                 const TrainConfig& cfg, const StepObserver& observer = {}) {
    cfg.validate();
    student.validate();
    teacher.validate();
    detail::check_compatible(student, train, "train_kd");
    detail::check_compatible(student, test, "train_kd");
    detail::check_compatible(teacher, train, "train_kd (teacher)");
    const Labels& y = train.require_labels();
    const Tensor teacher_probs = softmax_rows(mlp_predict(teacher, train.inputs));

    auto distill_gap = [&](const ModelParams& m) {
        const Tensor sp = softmax_rows(mlp_predict(m, train.inputs));
        double total = 0.0;
        for (std::size_t r = 0; r < sp.rows(); ++r) {
            total += kl_divergence(sp.values().subspan(r * sp.cols(), sp.cols()),
                                   teacher_probs.values().subspan(r * sp.cols(), sp.cols()));
        }
        return total / static_cast<double>(sp.rows());
    };

    ExperimentReport report;
    report.config = to_json(cfg);
    report.seed = cfg.seed;
    SgdOptimizer opt(cfg.optimizer, cfg.learning_rate, cfg.momentum);
    EpochBatches batches(train.size(), cfg.batch_size, derive_seed(cfg.seed, stream::kBatches));
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        detail::guard_divergence(epoch, [&] {
            for (const auto& idx : batches.next_epoch()) {
                ad::Graph g;
                const BoundParams bound = bind(g, student);
                const Labels targets = detail::gather_labels(y, idx);
                ad::Var logits = mlp_forward(student, bound, g.constant(train.inputs.gather_rows(idx)));
                ad::Var loss = knowledge_distillation_loss(logits, teacher_probs.gather_rows(idx), targets, cfg.kd);
                detail::checked_loss(loss);
                g.backward(loss);
                opt.step(student, bound);
                if (observer) observer(++step, student);
            }
            return 0;
        });
        if (detail::should_evaluate(epoch, cfg)) {
            report.rows.push_back(detail::evaluate(epoch, student, train, test, distill_gap(student)));
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// GAN

struct GanConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    double learning_rate = 0.01;
    OptimizerKind optimizer = OptimizerKind::Momentum;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    double gamma = 1.0;
    double prior_xi = 0.5;              // prior over {fake, real}: Ber(prior_xi)
    std::size_t snapshot_every = 5;     // the final epoch always gets a snapshot
    std::size_t snapshot_points = 512;
    std::vector<std::pair<double, double>> mode_centers;  // for coverage; empty disables it
    double coverage_radius = 0.0;       // 0: half the spacing between neighbouring centers
    double coverage_threshold = 0.01;   // share of generated points a mode needs

    void validate() const {
        if (epochs < 1 || batch_size < 1 || snapshot_every < 1 || snapshot_points < 1) {
            throw InvalidArgument("gan: epochs, batch_size, snapshot_every and snapshot_points must be >= 1");
        }
        if (!(learning_rate > 0.0)) throw InvalidArgument("gan: learning_rate must be > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("gan: momentum must lie in [0, 1)");
        if (!(gamma >= 0.0)) throw InvalidArgument("gan: gamma must be >= 0");
        if (!(prior_xi > 0.0 && prior_xi < 1.0)) throw InvalidArgument("gan: prior_xi must lie in (0, 1)");
    }
};

inline Json to_json(const GanConfig& c) {
    return Json{{"epochs", c.epochs},          {"batch_size", c.batch_size},       {"learning_rate", c.learning_rate},
                {"optimizer", to_string(c.optimizer)}, {"momentum", c.momentum}, {"seed", c.seed},
                {"gamma", c.gamma},            {"prior_xi", c.prior_xi},           {"snapshot_every", c.snapshot_every},
                {"snapshot_points", c.snapshot_points}, {"coverage_radius", c.coverage_radius},
                {"coverage_threshold", c.coverage_threshold}};
}

struct GanEpochRow {
    std::size_t epoch = 0;
    double d_loss = 0;       // epoch mean
    double g_loss = 0;       // epoch mean
    double mean_d_real = 0;  // epoch mean of D on real batches
    double mean_d_fake = 0;  // epoch mean of D on generated batches
    double mean_d = 0;       // epoch mean of the pooled D output m
    double reg_term = 0;     // epoch mean of D[[1 - m, m] || prior]
    long coverage = -1;      // covered modes at a snapshot epoch, -1 otherwise

    bool operator==(const GanEpochRow&) const = default;
};

inline constexpr std::string_view kGanCsvHeader = "epoch,d_loss,g_loss,mean_d_real,mean_d_fake,mean_d,reg_term,coverage";

struct GanSnapshot {
    std::size_t epoch = 0;
    Tensor points;  // [snapshot_points x 2]
    long coverage = -1;

    // Plain-text two-column point list.
    std::string to_text() const {
        std::ostringstream os;
        for (std::size_t i = 0; i < points.rows(); ++i) os << format_double(points(i, 0)) << ' ' << format_double(points(i, 1)) << '\n';
        return os.str();
    }

    bool operator==(const GanSnapshot&) const = default;
};

struct GanReport {
    std::vector<GanEpochRow> rows;
    std::vector<GanSnapshot> snapshots;
    Json config;
    std::uint64_t seed = 0;

    long final_coverage() const { return snapshots.empty() ? -1 : snapshots.back().coverage; }

    // Epochs whose mean pooled discriminator output stayed within [lo, hi].
    std::size_t epochs_in_band(double lo = 0.3, double hi = 0.7) const {
        return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [&](const GanEpochRow& r) { return r.mean_d >= lo && r.mean_d <= hi; }));
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << kGanCsvHeader << '\n';
        for (const auto& r : rows) {
            os << r.epoch << ',' << format_double(r.d_loss) << ',' << format_double(r.g_loss) << ',' << format_double(r.mean_d_real)
               << ',' << format_double(r.mean_d_fake) << ',' << format_double(r.mean_d) << ',' << format_double(r.reg_term) << ','
               << r.coverage << '\n';
        }
        return os.str();
    }

    Json summary() const {
        return Json{{"seed", seed},
                    {"config", config},
                    {"final_coverage", final_coverage()},
                    {"epochs_mean_d_in_0.3_0.7", epochs_in_band()},
                    {"final_d_loss", rows.empty() ? 0.0 : rows.back().d_loss},
                    {"final_g_loss", rows.empty() ? 0.0 : rows.back().g_loss}};
    }
};

/// Number of modes receiving at least `threshold` of the points within `radius`.
inline long mode_coverage(const Tensor& points, const std::vector<std::pair<double, double>>& centers, double radius, double threshold) {
    if (centers.empty()) return -1;
    const double need = threshold * static_cast<double>(points.rows());
    long covered = 0;
    for (const auto& [cx, cy] : centers) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < points.rows(); ++i) {
            const double dx = points(i, 0) - cx, dy = points(i, 1) - cy;
            if (dx * dx + dy * dy <= radius * radius) ++hits;
        }
        if (static_cast<double>(hits) >= need && hits > 0) ++covered;
    }
    return covered;
}

inline double default_coverage_radius(const std::vector<std::pair<double, double>>& centers) {
    if (centers.size() < 2) return 0.0;
    const double dx = centers[1].first - centers[0].first, dy = centers[1].second - centers[0].second;
    return 0.5 * std::sqrt(dx * dx + dy * dy);
}

namespace detail {

inline Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
    std::vector<double> v(rows * cols);
    for (double& x : v) x = rng.normal();
    return Tensor(Shape{rows, cols}, std::move(v));
}

} // namespace detail

/// Alternating discriminator / generator SGD steps. The discriminator
/// minimizes BCE(real, 1) + BCE(fake, 0) + gamma * D[p_D || Ber(prior_xi)],
/// the generator the non-saturating BCE(fake, 1).
inline GanReport train_gan(GanPair& pair, const Dataset& data, const GanConfig& cfg) {
    cfg.validate();
    pair.generator.validate();
    pair.discriminator.validate();
    if (data.dim() != kGanDataDim) throw ShapeError("train_gan: data must be 2-D");
    if (pair.generator.output_dim() != kGanDataDim || pair.discriminator.input_dim() != kGanDataDim ||
        pair.discriminator.output_dim() != 1) {
        throw ShapeError("train_gan: generator must emit 2-D points and the discriminator must map 2-D to 1");
    }
    const CategoricalPrior prior = bernoulli_prior(cfg.prior_xi);
    const double radius = cfg.coverage_radius > 0.0 ? cfg.coverage_radius : default_coverage_radius(cfg.mode_centers);
    const std::size_t latent = pair.latent_dim();

    GanReport report;
    report.config = to_json(cfg);
    report.seed = cfg.seed;
    SgdOptimizer d_opt(cfg.optimizer, cfg.learning_rate, cfg.momentum);
    SgdOptimizer g_opt(cfg.optimizer, cfg.learning_rate, cfg.momentum);
    EpochBatches batches(data.size(), cfg.batch_size, derive_seed(cfg.seed, stream::kBatches));
    Rng latent_rng(derive_seed(cfg.seed, stream::kLatent));
    const Tensor snapshot_z = [&] {
        Rng r(derive_seed(cfg.seed, stream::kSnapshot));
        return detail::standard_normal(cfg.snapshot_points, latent, r);
    }();

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        GanEpochRow row;
        row.epoch = epoch;
        std::size_t steps = 0;
        detail::guard_divergence(epoch, [&] {
            for (const auto& idx : batches.next_epoch()) {
                const Tensor real = data.inputs.gather_rows(idx);
                // Discriminator step on a detached generator sample.
                const Tensor fake = mlp_predict(pair.generator, detail::standard_normal(idx.size(), latent, latent_rng));
                {
                    ad::Graph g;
                    const BoundParams bd = bind(g, pair.discriminator);
                    ad::Var d_real = mlp_forward(pair.discriminator, bd, g.constant(real));
                    ad::Var d_fake = mlp_forward(pair.discriminator, bd, g.constant(fake));
                    const DiscriminatorLoss dl = discriminator_loss(d_real, d_fake, prior, cfg.gamma);
                    row.d_loss += detail::checked_loss(dl.total);
                    row.mean_d_real += ad::mean(d_real).value().item();
                    row.mean_d_fake += ad::mean(d_fake).value().item();
                    row.mean_d += dl.mean_output;
                    row.reg_term += dl.regularizer.value().item();
                    g.backward(dl.total);
                    d_opt.step(pair.discriminator, bd);
                }
                // Generator step through a frozen discriminator.
                {
                    ad::Graph g;
                    const BoundParams bg = bind(g, pair.generator);
                    const BoundParams bd = bind(g, pair.discriminator, false);
                    ad::Var z = g.constant(detail::standard_normal(idx.size(), latent, latent_rng));
                    ad::Var d_fake = mlp_forward(pair.discriminator, bd, mlp_forward(pair.generator, bg, z));
                    ad::Var gl = generator_loss(d_fake);
                    row.g_loss += detail::checked_loss(gl);
                    g.backward(gl);
                    g_opt.step(pair.generator, bg);
                }
                ++steps;
            }
            return 0;
        });
        const double inv = 1.0 / static_cast<double>(steps);
        row.d_loss *= inv;
        row.g_loss *= inv;
        row.mean_d_real *= inv;
        row.mean_d_fake *= inv;
        row.mean_d *= inv;
        row.reg_term *= inv;
        if (epoch % cfg.snapshot_every == 0 || epoch == cfg.epochs) {
            GanSnapshot snap;
            snap.epoch = epoch;
            snap.points = mlp_predict(pair.generator, snapshot_z);
            snap.coverage = mode_coverage(snap.points, cfg.mode_centers, radius, cfg.coverage_threshold);
            row.coverage = snap.coverage;
            report.snapshots.push_back(std::move(snap));
        }
        report.rows.push_back(row);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Gamma sweep

struct SweepRow {
    double gamma = 0;
    std::uint64_t seed = 0;
    double test_err = std::nan("");
    double gap = std::nan("");
    std::string status = "ok";
};

inline constexpr std::string_view kSweepCsvHeader = "gamma,seed,test_err,gap,status";

using ModelFactory = std::function<ModelParams(std::uint64_t seed)>;

/// One supervised run per (gamma, seed), rows ordered by gamma then seed. A
/// failing run is recorded in its row's status instead of aborting the sweep.
inline std::vector<SweepRow> gamma_sweep(const TrainConfig& base, std::vector<double> gammas, std::vector<std::uint64_t> seeds,
                                         const ModelFactory& make_model, const Dataset& train, const Dataset& test) {
    if (gammas.empty() || seeds.empty()) throw InvalidArgument("gamma_sweep: empty gamma or seed list");
    std::sort(gammas.begin(), gammas.end());
    std::sort(seeds.begin(), seeds.end());
    std::vector<SweepRow> rows;
    for (double gamma : gammas) {
        for (std::uint64_t seed : seeds) {
            SweepRow row;
            row.gamma = gamma;
            row.seed = seed;
            try {
                TrainConfig cfg = base;
                cfg.df.gamma = gamma;
                cfg.seed = seed;
                ModelParams model = make_model(seed);
                const auto report = train_supervised(model, train, test, cfg);
                row.test_err = report.final_row().test_err;
                row.gap = report.final_row().gap;
            } catch (const std::exception& e) {
                std::string msg = e.what();
                std::replace(msg.begin(), msg.end(), ',', ';');
                std::replace(msg.begin(), msg.end(), '\n', ' ');
                row.status = "error: " + msg;
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << kSweepCsvHeader << '\n';
    for (const auto& r : rows) {
        os << format_double(r.gamma) << ',' << r.seed << ',' << format_double(r.test_err) << ',' << format_double(r.gap) << ','
           << r.status << '\n';
    }
    return os.str();
}

} // namespace densfix
