#pragma once

// Experiment drivers shared by the command-line tool and the acceptance
// suite: data and model construction from a seed, and the multi-seed
// semi-supervised, sweep and GAN grids.

#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "densfix/data.hpp"
#include "densfix/metrics.hpp"
#include "densfix/models.hpp"
#include "densfix/rng.hpp"
#include "densfix/training.hpp"

namespace densfix {

struct DataConfig {
    std::size_t classes = 4;
    std::size_t n_train = 400;
    std::size_t n_test = 2000;
    std::size_t dim = 2;
    double separation = 2.5;
    double noise_std = 1.0;
    std::vector<double> class_weights;       // empty: balanced
    std::vector<double> test_class_weights;  // empty: balanced
    std::string train_csv;                   // non-empty: read data from CSV instead
    std::string test_csv;
    std::string label_column = "label";
};

struct TrainTest {
    Dataset train;
    Dataset test;
};

/// Synthetic train and test sets drawn around the same centers with
/// independent streams of `seed`, or the configured CSV files.
inline TrainTest make_train_test(const DataConfig& c, std::uint64_t seed) {
    if (!c.train_csv.empty()) {
        if (c.test_csv.empty()) throw InvalidArgument("data: test_csv is required when train_csv is set");
        TrainTest tt{load_csv_dataset(c.train_csv, c.label_column), load_csv_dataset(c.test_csv, c.label_column)};
        if (tt.train.num_classes != tt.test.num_classes || tt.train.dim() != tt.test.dim()) {
            throw ShapeError("data: train and test CSV files disagree on width or class count");
        }
        return tt;
    }
    MixtureSpec train{c.classes, c.n_train, c.class_weights, c.dim, c.separation, c.noise_std, derive_seed(seed, stream::kData)};
    MixtureSpec test{c.classes, c.n_test, c.test_class_weights, c.dim, c.separation, c.noise_std, derive_seed(seed, stream::kTestData)};
    return {make_gaussian_mixture(train), make_gaussian_mixture(test)};
}

struct ModelConfig {
    std::vector<std::size_t> hidden{32};
    Activation activation = Activation::Relu;
};

inline ModelParams make_model(const ModelConfig& m, std::size_t input_dim, std::size_t classes, std::uint64_t seed) {
    std::vector<std::size_t> sizes{input_dim};
    sizes.insert(sizes.end(), m.hidden.begin(), m.hidden.end());
    sizes.push_back(classes);
    return mlp_init(sizes, m.activation, derive_seed(seed, stream::kInit));
}

inline std::vector<std::uint64_t> seed_range(std::uint64_t base, std::size_t count) {
    std::vector<std::uint64_t> s(count);
    std::iota(s.begin(), s.end(), base);
    return s;
}

// ---------------------------------------------------------------------------
// Semi-supervised grid

struct SemisupRow {
    double gamma = 0;
    std::uint64_t seed = 0;
    double train_loss = 0;  // cross-entropy on the labeled part
    double test_loss = 0;
    double gap = 0;
    double test_err = 0;
    double reg_term = 0;
};

inline constexpr std::string_view kSemisupCsvHeader = "gamma,seed,train_loss,test_loss,gap,test_err,reg_term";

struct GammaMean {
    double gamma = 0;
    double mean_gap = 0;
    double mean_test_err = 0;
    std::size_t runs = 0;
};

/// Every (gamma, seed) pair trains from the same data, split and
/// initialization for that seed, so rows differ across gammas only through
/// the regularizer.
inline std::vector<SemisupRow> run_semisup_grid(const DataConfig& data, const ModelConfig& model, const TrainConfig& base,
                                                double labeled_fraction, const std::vector<double>& gammas,
                                                const std::vector<std::uint64_t>& seeds) {
    std::vector<SemisupRow> rows;
    for (std::uint64_t seed : seeds) {
        const TrainTest tt = make_train_test(data, seed);
        const SemiSplit split = split_semi(tt.train, labeled_fraction, derive_seed(seed, stream::kSplit));
        for (double gamma : gammas) {
            TrainConfig cfg = base;
            cfg.seed = seed;
            cfg.df.gamma = gamma;
            ModelParams m = make_model(model, tt.train.dim(), tt.train.num_classes, seed);
            const auto report = train_semi_supervised(m, split.labeled, split.unlabeled, tt.test, cfg);
            const auto& f = report.final_row();
            rows.push_back({gamma, seed, f.train_loss, f.test_loss, f.gap, f.test_err, f.reg_term});
        }
    }
    std::stable_sort(rows.begin(), rows.end(), [](const SemisupRow& a, const SemisupRow& b) {
        return a.gamma != b.gamma ? a.gamma < b.gamma : a.seed < b.seed;
    });
    return rows;
}

inline std::vector<GammaMean> mean_by_gamma(const std::vector<SemisupRow>& rows) {
    std::vector<GammaMean> out;
    for (const auto& r : rows) {
        if (out.empty() || out.back().gamma != r.gamma) out.push_back({r.gamma, 0, 0, 0});
        auto& m = out.back();
        m.mean_gap += r.gap;
        m.mean_test_err += r.test_err;
        ++m.runs;
    }
    for (auto& m : out) {
        m.mean_gap /= static_cast<double>(m.runs);
        m.mean_test_err /= static_cast<double>(m.runs);
    }
    return out;
}

inline std::vector<GammaMean> mean_by_gamma(const std::vector<SweepRow>& rows) {
    std::vector<GammaMean> out;
    for (const auto& r : rows) {
        if (r.status != "ok") continue;
        if (out.empty() || out.back().gamma != r.gamma) out.push_back({r.gamma, 0, 0, 0});
        auto& m = out.back();
        m.mean_gap += r.gap;
        m.mean_test_err += r.test_err;
        ++m.runs;
    }
    for (auto& m : out) {
        m.mean_gap /= static_cast<double>(m.runs);
        m.mean_test_err /= static_cast<double>(m.runs);
    }
    return out;
}

// Spearman correlation between gamma and the mean gap.
inline double gap_trend(const std::vector<GammaMean>& means) {
    std::vector<double> g, gap;
    for (const auto& m : means) {
        g.push_back(m.gamma);
        gap.push_back(m.mean_gap);
    }
    return spearman(g, gap);
}

inline std::string semisup_to_csv(const std::vector<SemisupRow>& rows) {
    std::ostringstream os;
    os << kSemisupCsvHeader << '\n';
    for (const auto& r : rows) {
        os << format_double(r.gamma) << ',' << r.seed << ',' << format_double(r.train_loss) << ',' << format_double(r.test_loss) << ','
           << format_double(r.gap) << ',' << format_double(r.test_err) << ',' << format_double(r.reg_term) << '\n';
    }
    return os.str();
}

inline std::string gamma_means_to_csv(const std::vector<GammaMean>& means) {
    std::ostringstream os;
    os << "gamma,mean_gap,mean_test_err,runs\n";
    for (const auto& m : means) {
        os << format_double(m.gamma) << ',' << format_double(m.mean_gap) << ',' << format_double(m.mean_test_err) << ',' << m.runs << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Supervised sweep with per-seed data

/// Like gamma_sweep, but each seed also draws its own train and test sets.
inline std::vector<SweepRow> run_sweep_grid(const DataConfig& data, const ModelConfig& model, const TrainConfig& base,
                                            std::vector<double> gammas, std::vector<std::uint64_t> seeds) {
    std::sort(gammas.begin(), gammas.end());
    std::sort(seeds.begin(), seeds.end());
    std::vector<SweepRow> rows;
    for (std::uint64_t seed : seeds) {
        const TrainTest tt = make_train_test(data, seed);
        auto part = gamma_sweep(base, gammas, {seed},
                                [&](std::uint64_t s) { return make_model(model, tt.train.dim(), tt.train.num_classes, s); },
                                tt.train, tt.test);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        return a.gamma != b.gamma ? a.gamma < b.gamma : a.seed < b.seed;
    });
    return rows;
}

// ---------------------------------------------------------------------------
// GAN grid

struct RingConfig {
    std::size_t modes = 8;
    std::size_t n = 2000;
    double radius = 2.0;
    double sigma = 0.05;
    std::size_t latent_dim = 8;
    std::size_t hidden = 512;
};

/// One GAN run on the ring; data and networks depend only on `seed`.
inline GanReport run_gan(const RingConfig& ring, GanConfig cfg, double gamma, std::uint64_t seed) {
    const Dataset data = make_ring_of_gaussians(ring.modes, ring.n, ring.radius, ring.sigma, derive_seed(seed, stream::kData));
    GanPair pair = gan_init(ring.latent_dim, derive_seed(seed, stream::kInit), ring.hidden);
    cfg.gamma = gamma;
    cfg.seed = seed;
    cfg.mode_centers = ring_centers(ring.modes, ring.radius);
    return train_gan(pair, data, cfg);
}

} // namespace densfix
