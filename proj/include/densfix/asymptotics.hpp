#pragma once

// Monte Carlo study of the penalized maximum-likelihood estimator for
// one-parameter label models, and the zero-forcing descent experiment.
//
// Both families are handled as a K-class label model with one free
// parameter theta = P(y = t) for a tracked class t, the remaining mass
// spread evenly over the other K - 1 classes:
//   bernoulli(xi0):          K = 2, t = 1, theta0 = xi0
//   categorical-uniform(K):  t = 0, theta0 = 1 / K
// Only the count c of class-t samples enters the likelihood.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "densfix/autodiff.hpp"
#include "densfix/data.hpp"
#include "densfix/errors.hpp"
#include "densfix/losses.hpp"
#include "densfix/priors.hpp"
#include "densfix/rng.hpp"

namespace densfix {

struct Family {
    struct Bernoulli {
        double xi0;
    };
    struct CategoricalUniform {
        std::size_t k;
    };
    std::variant<Bernoulli, CategoricalUniform> kind = Bernoulli{0.5};

    static Family bernoulli(double xi0) { return {Bernoulli{xi0}}; }
    static Family categorical_uniform(std::size_t k) { return {CategoricalUniform{k}}; }

    bool is_bernoulli() const { return std::holds_alternative<Bernoulli>(kind); }
    std::size_t num_classes() const { return is_bernoulli() ? 2 : std::get<CategoricalUniform>(kind).k; }
    std::size_t tracked_class() const { return is_bernoulli() ? 1 : 0; }
    double theta0() const {
        return is_bernoulli() ? std::get<Bernoulli>(kind).xi0 : 1.0 / static_cast<double>(std::get<CategoricalUniform>(kind).k);
    }

    void validate() const {
        if (is_bernoulli()) {
            const double xi = std::get<Bernoulli>(kind).xi0;
            if (!(xi > 0.0 && xi < 1.0)) throw DomainError("family: bernoulli xi0 must lie in (0, 1)");
        } else if (std::get<CategoricalUniform>(kind).k < 2) {
            throw InvalidArgument("family: categorical-uniform needs K >= 2");
        }
    }

    // p_theta as a full K-vector.
    std::vector<double> probs(double theta) const {
        const std::size_t k = num_classes();
        std::vector<double> p(k, (1.0 - theta) / static_cast<double>(k - 1));
        p[tracked_class()] = theta;
        return p;
    }
};

inline std::string to_string(const Family& f) {
    std::ostringstream os;
    if (f.is_bernoulli()) {
        os << "bernoulli:" << shortest_double(f.theta0());
    } else {
        os << "categorical-uniform:" << f.num_classes();
    }
    return os.str();
}

// "bernoulli:<xi0>" or "categorical-uniform:<K>".
inline Family parse_family(std::string_view s) {
    if (s.starts_with("bernoulli:")) {
        const Family f = Family::bernoulli(detail::parse_double(s.substr(10), "family"));
        f.validate();
        return f;
    }
    if (s.starts_with("categorical-uniform:")) {
        const double k = detail::parse_double(s.substr(20), "family");
        if (!(k >= 2.0) || k != std::floor(k) || k > 1e6) throw InvalidArgument("family: K must be an integer >= 2");
        return Family::categorical_uniform(static_cast<std::size_t>(k));
    }
    throw InvalidArgument("family must be bernoulli:<xi0> or categorical-uniform:<K>, got '" + std::string(s) + "'");
}

/// Per-sample Fisher information of theta at theta0, 1 / (theta0 (1 - theta0)).
/// Bernoulli(xi0) gives 1 / (xi0 (1 - xi0)); categorical-uniform(K) gives K^2 / (K - 1).
inline double fisher_information(const Family& f) {
    f.validate();
    const double t = f.theta0();
    return 1.0 / (t * (1.0 - t));
}

// eta for the family's prior: eta_bernoulli(xi0) or eta_uniform(K).
inline double family_eta(const Family& f) {
    f.validate();
    return f.is_bernoulli() ? eta_bernoulli(f.theta0()) : eta_uniform(f.num_classes());
}

/// 1 / I unregularized, 1 / (I + eta) regularized.
inline double theoretical_variance(const Family& f, bool regularized) {
    const double i = fisher_information(f);
    return regularized ? 1.0 / (i + family_eta(f)) : 1.0 / i;
}

// ---------------------------------------------------------------------------
// Penalized fit

// How the KL penalty is weighted against the summed log-likelihood.
enum class PenaltyScale {
    Total,      // N * D[p_theta || q]
    PerSample,  // D[p_theta || q]
};

inline std::string_view to_string(PenaltyScale s) { return s == PenaltyScale::Total ? "total" : "per_sample"; }

inline PenaltyScale parse_penalty_scale(std::string_view s) {
    if (s == "total") return PenaltyScale::Total;
    if (s == "per_sample") return PenaltyScale::PerSample;
    throw InvalidArgument("penalty must be total or per_sample, got '" + std::string(s) + "'");
}

struct FitResult {
    double theta = 0;
    bool clamped = false;  // no interior maximum; theta sits on the boundary
    double gradient = 0;   // derivative of the normalized objective at theta
};

/// Maximizes
///   (1/N) [ sum_i log p_theta(y_i) - w D[p_theta || q] ],  w = N (Total) or 1 (PerSample)
/// over theta in (0, 1). `count` is the number of samples in the tracked
/// class. The objective is strictly concave; golden-section search brackets
/// the maximizer and a safeguarded Newton iteration polishes it until the
/// derivative is below 1e-10. Without `prior` the KL term is dropped.
inline FitResult fit_penalized_mle(std::size_t count, std::size_t n, const Family& family, const std::optional<CategoricalPrior>& prior,
                                   PenaltyScale scale = PenaltyScale::Total) {
    if (n == 0) throw InvalidArgument("fit_penalized_mle: empty sample");
    if (count > n) throw InvalidArgument("fit_penalized_mle: count exceeds sample size");
    const std::size_t k = family.num_classes(), t = family.tracked_class();
    const double a = static_cast<double>(count) / static_cast<double>(n);
    const double s = !prior ? 0.0 : (scale == PenaltyScale::Total ? 1.0 : 1.0 / static_cast<double>(n));

    if (s == 0.0) {
        // Closed form; kept on the same code path as the other variants.
        if (count == 0 || count == n) return {a, true, 0.0};
        return {a, false, 0.0};
    }
    if (prior->size() != k) throw ShapeError("fit_penalized_mle: prior has the wrong number of classes");
    const auto& q = prior->vec();
    const double qt = q[t];
    double rest_log_mean = 0.0;
    bool rest_zero = false;
    for (std::size_t j = 0; j < k; ++j) {
        if (j == t) continue;
        if (q[j] == 0.0) rest_zero = true;
        else rest_log_mean += std::log(q[j]);
    }
    // A zero in q forces theta onto the boundary where p_theta vanishes there.
    if (qt == 0.0 && rest_zero) throw AbsoluteContinuityError("fit_penalized_mle: prior excludes every outcome");
    if (qt == 0.0) return {0.0, true, 0.0};
    if (rest_zero) return {1.0, true, 0.0};
    rest_log_mean /= static_cast<double>(k - 1);
    const double log_km1 = std::log(static_cast<double>(k - 1));

    auto kl = [&](double th) {
        return th * std::log(th / qt) + (1.0 - th) * (std::log(1.0 - th) - log_km1 - rest_log_mean);
    };
    auto objective = [&](double th) {
        double ll = 0.0;
        if (a > 0.0) ll += a * std::log(th);
        if (a < 1.0) ll += (1.0 - a) * std::log(1.0 - th);
        return ll - s * kl(th);
    };
    auto deriv = [&](double th) {
        return a / th - (1.0 - a) / (1.0 - th) - s * (std::log(th / qt) - std::log(1.0 - th) + log_km1 + rest_log_mean);
    };
    auto second = [&](double th) {
        return -a / (th * th) - (1.0 - a) / ((1.0 - th) * (1.0 - th)) - s * (1.0 / th + 1.0 / (1.0 - th));
    };

    constexpr double kInvPhi = 0.6180339887498949;
    double lo = 1e-15, hi = 1.0 - 1e-15;
    double x1 = hi - kInvPhi * (hi - lo), x2 = lo + kInvPhi * (hi - lo);
    double f1 = objective(x1), f2 = objective(x2);
    for (int it = 0; it < 80 && hi - lo > 1e-9; ++it) {
        if (f1 < f2) {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + kInvPhi * (hi - lo);
            f2 = objective(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - kInvPhi * (hi - lo);
            f1 = objective(x1);
        }
    }
    // Near the maximum the objective is flat below double resolution, so the
    // golden bracket can drift off the maximizer. Re-establish it from the
    // sign of f', which stays well conditioned, then polish.
    constexpr double kLo = 1e-300, kHi = 1.0 - 1e-16;
    for (double w = std::max(hi - lo, 1e-12); lo > kLo && deriv(lo) <= 0.0; w *= 2.0) lo = std::max(kLo, lo - w);
    for (double w = std::max(hi - lo, 1e-12); hi < kHi && deriv(hi) >= 0.0; w *= 2.0) hi = std::min(kHi, hi + w);
    double th = 0.5 * (lo + hi);
    double g = deriv(th);
    for (int it = 0; it < 200 && std::abs(g) >= 1e-10; ++it) {
        if (g > 0.0) lo = th;
        else hi = th;
        double next = th - g / second(th);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (next == th) break;
        th = next;
        g = deriv(th);
    }
    if (!std::isfinite(th) || !std::isfinite(g)) throw NonFiniteError("fit_penalized_mle: search produced a non-finite value");
    if (std::abs(g) >= 1e-10) {
        // Converged to floating-point resolution without meeting the gradient
        // tolerance; accept only when the bracket has collapsed.
        if (hi - lo > 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, th)) {
            throw DivergenceError("fit_penalized_mle: Newton polish did not converge");
        }
    }
    return {th, false, g};
}

// ---------------------------------------------------------------------------
// Variance curve

// Where the penalty's reference distribution comes from in a replica.
enum class PriorSource {
    Estimated,  // label frequencies of an independent sample of the same size
    Truth,      // p_theta0 itself
};

inline std::string_view to_string(PriorSource s) { return s == PriorSource::Estimated ? "estimated" : "truth"; }

inline PriorSource parse_prior_source(std::string_view s) {
    if (s == "estimated") return PriorSource::Estimated;
    if (s == "truth") return PriorSource::Truth;
    throw InvalidArgument("prior_source must be estimated or truth, got '" + std::string(s) + "'");
}

// Which estimators a curve run fits.
enum class Variants { Both, Regularized, Unregularized };

inline std::string_view to_string(Variants v) {
    switch (v) {
        case Variants::Both: return "both";
        case Variants::Regularized: return "regularized";
        case Variants::Unregularized: return "unregularized";
    }
    return "both";
}

inline Variants parse_variants(std::string_view s) {
    if (s == "both") return Variants::Both;
    if (s == "regularized") return Variants::Regularized;
    if (s == "unregularized") return Variants::Unregularized;
    throw InvalidArgument("regularized must be both, regularized or unregularized, got '" + std::string(s) + "'");
}

struct AsymptoticsConfig {
    Family family = Family::bernoulli(0.3);
    std::vector<std::size_t> n_grid{100, 200, 500, 1000, 2000};
    std::size_t replicas = 1000;
    Variants regularized = Variants::Both;
    PriorSource prior_source = PriorSource::Estimated;
    PenaltyScale penalty = PenaltyScale::Total;
    std::uint64_t seed = 0;
    std::size_t threads = 1;  // results do not depend on this

    void validate() const {
        family.validate();
        if (n_grid.empty()) throw InvalidArgument("asymptotics: empty N grid");
        for (std::size_t n : n_grid) {
            if (n < 10) throw InvalidArgument("asymptotics: every N must be >= 10");
        }
        if (replicas < 100) throw InvalidArgument("asymptotics: replicas must be >= 100");
        if (threads < 1) throw InvalidArgument("asymptotics: threads must be >= 1");
    }
};

struct VarianceRow {
    std::size_t n = 0;
    double empirical_var = 0;  // sample variance of sqrt(N) (theta_hat - theta0)
    double theoretical_var = 0;
    bool regularized = false;
    std::size_t replicas = 0;
    std::size_t failures = 0;
};

inline constexpr std::string_view kVarianceCsvHeader = "N,empirical_var,theoretical_var,regularized,replicas,failures";

inline std::string variance_rows_to_csv(const std::vector<VarianceRow>& rows) {
    std::ostringstream os;
    os << kVarianceCsvHeader << '\n';
    for (const auto& r : rows) {
        os << r.n << ',' << format_double(r.empirical_var) << ',' << format_double(r.theoretical_var) << ','
           << (r.regularized ? 1 : 0) << ',' << r.replicas << ',' << r.failures << '\n';
    }
    return os.str();
}

namespace detail {

// Number of tracked-class draws among n samples, and optionally the full
// class counts of a second, independent sample of the same size.
inline std::size_t draw_count(const Family& f, std::size_t n, Rng& rng, std::vector<std::size_t>* class_counts = nullptr) {
    const std::size_t k = f.num_classes(), t = f.tracked_class();
    if (class_counts) class_counts->assign(k, 0);
    std::size_t c = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t y;
        if (f.is_bernoulli()) y = rng.bernoulli(f.theta0()) ? 1 : 0;
        else y = rng.index(k);
        if (y == t) ++c;
        if (class_counts) ++(*class_counts)[y];
    }
    return c;
}

struct ReplicaOutcome {
    double plain = 0, penalized = 0;
    bool plain_ok = false, penalized_ok = false;
};

inline ReplicaOutcome run_replica(const AsymptoticsConfig& cfg, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    ReplicaOutcome out;
    const std::size_t c = draw_count(cfg.family, n, rng);
    const bool want_plain = cfg.regularized != Variants::Regularized;
    const bool want_pen = cfg.regularized != Variants::Unregularized;
    if (want_plain) {
        try {
            out.plain = fit_penalized_mle(c, n, cfg.family, std::nullopt, cfg.penalty).theta;
            out.plain_ok = std::isfinite(out.plain);
        } catch (const Error&) {
        }
    }
    if (want_pen) {
        try {
            std::optional<CategoricalPrior> q;
            if (cfg.prior_source == PriorSource::Truth) {
                q.emplace(cfg.family.probs(cfg.family.theta0()));
            } else {
                std::vector<std::size_t> counts;
                draw_count(cfg.family, n, rng, &counts);
                std::vector<double> p(counts.size());
                for (std::size_t j = 0; j < counts.size(); ++j) p[j] = static_cast<double>(counts[j]) / static_cast<double>(n);
                q.emplace(std::move(p));
            }
            out.penalized = fit_penalized_mle(c, n, cfg.family, q, cfg.penalty).theta;
            out.penalized_ok = std::isfinite(out.penalized);
        } catch (const Error&) {
        }
    }
    return out;
}

inline double scaled_sample_variance(const std::vector<double>& thetas, double theta0, std::size_t n) {
    const double rn = std::sqrt(static_cast<double>(n));
    double mean = 0.0;
    for (double t : thetas) mean += rn * (t - theta0);
    mean /= static_cast<double>(thetas.size());
    double ss = 0.0;
    for (double t : thetas) {
        const double d = rn * (t - theta0) - mean;
        ss += d * d;
    }
    return ss / static_cast<double>(thetas.size() - 1);
}

} // namespace detail

/// For every N in the grid, fits R replicas and reports the empirical
/// variance of sqrt(N) (theta_hat - theta0) next to the theoretical value.
/// Replica r at grid index j draws from seed derive_seed(derive_seed(seed, j), r);
/// regularized and unregularized fits share the replica's data sample. A
/// variant with more than 1% failed fits aborts the run.
inline std::vector<VarianceRow> simulate_variance_curve(const AsymptoticsConfig& cfg) {
    cfg.validate();
    const double theta0 = cfg.family.theta0();
    std::vector<VarianceRow> rows;
    for (std::size_t j = 0; j < cfg.n_grid.size(); ++j) {
        const std::size_t n = cfg.n_grid[j];
        const std::uint64_t grid_seed = derive_seed(cfg.seed, j);
        std::vector<detail::ReplicaOutcome> outcomes(cfg.replicas);
        auto work = [&](std::size_t begin, std::size_t end) {
            for (std::size_t r = begin; r < end; ++r) outcomes[r] = detail::run_replica(cfg, n, derive_seed(grid_seed, r));
        };
        const std::size_t workers = std::min(cfg.threads, cfg.replicas);
        if (workers <= 1) {
            work(0, cfg.replicas);
        } else {
            std::vector<std::thread> pool;
            const std::size_t chunk = (cfg.replicas + workers - 1) / workers;
            for (std::size_t w = 0; w < workers; ++w) {
                const std::size_t b = w * chunk, e = std::min(cfg.replicas, b + chunk);
                if (b < e) pool.emplace_back(work, b, e);
            }
            for (auto& th : pool) th.join();
        }

        for (bool reg : {false, true}) {
            if (reg && cfg.regularized == Variants::Unregularized) continue;
            if (!reg && cfg.regularized == Variants::Regularized) continue;
            std::vector<double> thetas;
            thetas.reserve(cfg.replicas);
            for (const auto& o : outcomes) {
                if (reg ? o.penalized_ok : o.plain_ok) thetas.push_back(reg ? o.penalized : o.plain);
            }
            VarianceRow row;
            row.n = n;
            row.regularized = reg;
            row.replicas = cfg.replicas;
            row.failures = cfg.replicas - thetas.size();
            if (row.failures * 100 > cfg.replicas) {
                throw DivergenceError("simulate_variance_curve: " + std::to_string(row.failures) + " of " + std::to_string(cfg.replicas) +
                                      " fits failed at N=" + std::to_string(n));
            }
            row.empirical_var = detail::scaled_sample_variance(thetas, theta0, n);
            row.theoretical_var = theoretical_variance(cfg.family, reg);
            rows.push_back(row);
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Zero-forcing

struct ZeroForcingConfig {
    std::size_t num_classes = 5;
    std::size_t zero_index = 0;
    std::size_t steps = 2000;
    double zero_mass = 1e-8;  // q(zero_index); 0 runs the uniform control
    double learning_rate = 0.05;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_classes < 2) throw InvalidArgument("zero_forcing: K must be >= 2");
        if (zero_index >= num_classes) throw InvalidArgument("zero_forcing: zero_index out of range");
        if (!(zero_mass > 0.0 && zero_mass < 1.0) && zero_mass != 0.0) throw DomainError("zero_forcing: zero_mass must lie in [0, 1)");
        if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw InvalidArgument("zero_forcing: learning_rate must lie in (0, 1]");
    }
};

struct ZeroForcingResult {
    std::vector<double> trajectory;  // p(zero_index) after 0, 1, ..., steps updates
    std::vector<double> final_probs;
    CategoricalPrior prior;
};

/// Minimizes D[p || q] over the simplex from random logits z, p = softmax(z).
/// Each step moves the logits against the gradient of the KL with respect to
/// p (a mirror-descent step on the simplex). q puts zero_mass on zero_index
/// and splits the rest evenly; zero_mass == 0 gives the uniform control.
inline ZeroForcingResult zero_forcing_experiment(const ZeroForcingConfig& cfg) {
    cfg.validate();
    const std::size_t k = cfg.num_classes;
    std::vector<double> q(k, 1.0 / static_cast<double>(k));
    if (cfg.zero_mass > 0.0) {
        std::fill(q.begin(), q.end(), (1.0 - cfg.zero_mass) / static_cast<double>(k - 1));
        q[cfg.zero_index] = cfg.zero_mass;
    }
    CategoricalPrior prior(std::move(q));

    Rng rng(cfg.seed);
    std::vector<double> z(k);
    for (double& v : z) v = rng.normal();

    auto softmax = [](const std::vector<double>& logits) {
        const double mx = *std::max_element(logits.begin(), logits.end());
        std::vector<double> p(logits.size());
        double s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] = std::exp(logits[i] - mx));
        for (double& v : p) v /= s;
        return p;
    };

    ZeroForcingResult out{{}, {}, prior};
    out.trajectory.reserve(cfg.steps + 1);
    std::vector<double> p = softmax(z);
    out.trajectory.push_back(p[cfg.zero_index]);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        ad::Graph g;
        ad::Var pv = g.parameter(Tensor::vector(p));
        g.backward(kl_divergence(pv, prior));
        const Tensor& grad = pv.grad();
        for (std::size_t i = 0; i < k; ++i) z[i] -= cfg.learning_rate * grad[i];
        p = softmax(z);
        out.trajectory.push_back(p[cfg.zero_index]);
    }
    out.final_probs = p;
    return out;
}

} // namespace densfix
