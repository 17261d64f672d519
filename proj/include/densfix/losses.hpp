#pragma once

// Classification, density-fixing, distillation and GAN objectives built on
// the autodiff operations. Every KL term is D[model || reference]: the model
// distribution comes first.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "densfix/autodiff.hpp"
#include "densfix/errors.hpp"
#include "densfix/priors.hpp"
#include "densfix/tensor.hpp"

namespace densfix {

// Floor applied inside logarithms and the absolute-continuity threshold.
inline constexpr double kEps0 = 1e-12;

enum class DfMode { Marginal, PerSample };

inline std::string_view to_string(DfMode m) { return m == DfMode::Marginal ? "marginal" : "per_sample"; }

inline DfMode parse_df_mode(std::string_view s) {
    if (s == "marginal") return DfMode::Marginal;
    if (s == "per_sample") return DfMode::PerSample;
    throw InvalidArgument("df_mode must be marginal or per_sample, got '" + std::string(s) + "'");
}

struct DensityFixingConfig {
    double gamma = 1.0;
    DfMode mode = DfMode::Marginal;
    PriorSpec prior = PriorSpec::uniform();

    void validate() const {
        if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw InvalidArgument("gamma must be a finite value >= 0");
    }
};

struct KDConfig {
    double alpha = 0.5;
    double temperature = 1.0;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("kd_alpha must lie in [0, 1]");
        if (!(temperature > 0.0) || !std::isfinite(temperature)) throw InvalidArgument("kd_temperature must be > 0");
    }
};

// ---------------------------------------------------------------------------
// KL divergence

namespace detail {

// p [n x K] (or [K]) against per-row references q of the same shape. Returns
// the sum over all entries of p log(p / q) with the 0 log 0 = 0 convention.
inline ad::Var kl_sum(ad::Var p, const Tensor& q) {
    const Tensor& pv = p.value();
    if (pv.size() != q.size()) throw ShapeError("kl_divergence: reference has " + std::to_string(q.size()) +
                                                " entries, distribution has " + std::to_string(pv.size()));
    std::vector<double> log_q(q.size()), mask(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] < 0.0) throw DomainError("kl_divergence: negative reference probability");
        if (q[i] == 0.0) {
            if (pv[i] > kEps0) {
                throw AbsoluteContinuityError("kl_divergence: absolute continuity violated at component " +
                                              std::to_string(i % pv.cols()) + " (p = " + std::to_string(pv[i]) +
                                              ", q = 0)");
            }
            log_q[i] = 0.0;
            mask[i] = 0.0;
        } else {
            log_q[i] = std::log(q[i]);
            mask[i] = 1.0;
        }
    }
    ad::Graph& g = p.graph();
    ad::Var log_ratio = ad::log_floor(p, kEps0) - g.constant(Tensor(pv.shape(), std::move(log_q)));
    return ad::sum(p * log_ratio * g.constant(Tensor(pv.shape(), std::move(mask))));
}

inline Tensor broadcast_rows(const CategoricalPrior& q, std::size_t rows) {
    std::vector<double> v;
    v.reserve(rows * q.size());
    for (std::size_t r = 0; r < rows; ++r) v.insert(v.end(), q.vec().begin(), q.vec().end());
    return Tensor(Shape{rows, q.size()}, std::move(v));
}

} // namespace detail

/// D[p || q] for a differentiable probability vector p of length K.
inline ad::Var kl_divergence(ad::Var p, const CategoricalPrior& q) {
    if (p.value().rank() != 1) throw ShapeError("kl_divergence: p must be a vector, got " + shape_str(p.shape()));
    return detail::kl_sum(p, Tensor::vector(q.vec()));
}

/// Mean over rows of D[p_r || q_r]. `q` is either [K] (shared by every row)
/// or the same shape as p.
inline ad::Var mean_row_kl(ad::Var p, const Tensor& q) {
    if (p.value().rank() != 2) throw ShapeError("mean_row_kl: p must be n x K");
    const std::size_t n = p.value().rows();
    Tensor ref = q;
    if (q.rank() == 1) {
        if (q.size() != p.value().cols()) throw ShapeError("mean_row_kl: reference length mismatch");
        ref = detail::broadcast_rows(CategoricalPrior(std::vector<double>(q.values().begin(), q.values().end())), n);
    }
    return ad::scalar_mul(detail::kl_sum(p, ref), 1.0 / static_cast<double>(n));
}

// Plain-value KL with the same conventions and errors as the graph version.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw ShapeError("kl_divergence: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (q[i] == 0.0) {
            if (p[i] > kEps0) throw AbsoluteContinuityError("kl_divergence: absolute continuity violated at component " + std::to_string(i));
            continue;
        }
        if (p[i] > 0.0) s += p[i] * (std::log(std::max(p[i], kEps0)) - std::log(q[i]));
    }
    return s;
}

inline double kl_divergence(const CategoricalPrior& p, const CategoricalPrior& q) {
    return kl_divergence(p.probs(), q.probs());
}

// ---------------------------------------------------------------------------
// Classification losses

inline void check_targets(std::span<const std::size_t> targets, std::size_t rows, std::size_t classes) {
    if (targets.size() != rows) throw ShapeError("targets: expected " + std::to_string(rows) + " labels, got " + std::to_string(targets.size()));
    for (std::size_t t : targets) {
        if (t >= classes) throw InvalidArgument("targets: label " + std::to_string(t) + " outside [0, " + std::to_string(classes) + ")");
    }
}

/// Mean over the batch of -log softmax(logits)[target].
inline ad::Var cross_entropy(ad::Var logits, std::span<const std::size_t> targets) {
    if (logits.value().rank() != 2) throw ShapeError("cross_entropy: logits must be n x K");
    check_targets(targets, logits.value().rows(), logits.value().cols());
    return ad::neg(ad::mean(ad::pick(ad::log_softmax(logits), targets)));
}

/// The model's class marginal over a batch: mean of the per-sample rows.
inline ad::Var marginal_prediction(ad::Var probs) { return ad::mean_rows(probs); }

struct DensityFixingTerms {
    ad::Var total;
    ad::Var cross_entropy;
    std::optional<ad::Var> regularizer;  // unweighted KL; absent when gamma == 0
};

/// Cross-entropy plus gamma times the density-fixing KL. With gamma == 0 the
/// cross-entropy node itself is returned, so the result is bit-identical to
/// the unregularized loss.
inline DensityFixingTerms density_fixing_terms(ad::Var logits, std::span<const std::size_t> targets,
                                               const CategoricalPrior& prior, const DensityFixingConfig& cfg) {
    cfg.validate();
    if (logits.value().rank() != 2 || logits.value().cols() != prior.size()) {
        throw ShapeError("density_fixing_loss: logits " + shape_str(logits.shape()) + " do not match a prior over " +
                         std::to_string(prior.size()) + " classes");
    }
    ad::Var ce = cross_entropy(logits, targets);
    if (cfg.gamma == 0.0) return {ce, ce, std::nullopt};
    ad::Var probs = ad::softmax(logits);
    ad::Var reg;
    if (cfg.mode == DfMode::Marginal) {
        if (!prior.strictly_positive()) {
            throw AbsoluteContinuityError("density_fixing_loss: marginal mode needs a strictly positive prior");
        }
        reg = kl_divergence(marginal_prediction(probs), prior);
    } else {
        reg = mean_row_kl(probs, Tensor::vector(prior.vec()));
    }
    return {ce + cfg.gamma * reg, ce, reg};
}

inline ad::Var density_fixing_loss(ad::Var logits, std::span<const std::size_t> targets, const CategoricalPrior& prior,
                                   const DensityFixingConfig& cfg) {
    return density_fixing_terms(logits, targets, prior, cfg).total;
}

struct DecompositionSides {
    double lhs;  // per-sample log-likelihood with the class-ratio correction
    double rhs;  // summed conditional log-likelihood minus the marginal KL
};

/// Evaluates both sides of the log-likelihood decomposition on one batch.
/// lhs = sum_i log p(y_i|x_i) + (1/n) sum_i sum_k p(k|x_i) log(q_k / m_k)
/// rhs = sum_i log p(y_i|x_i) - D[m || q]
/// where m is the batch marginal. The two agree up to rounding.
inline DecompositionSides likelihood_decomposition_check(const Tensor& logits, std::span<const std::size_t> targets,
                                                         const CategoricalPrior& prior) {
    if (logits.rank() != 2 || logits.cols() != prior.size()) throw ShapeError("likelihood_decomposition_check: shape mismatch");
    const std::size_t n = logits.rows(), k = logits.cols();
    check_targets(targets, n, k);

    std::vector<double> probs(n * k), m(k, 0.0);
    double loglik = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        double mx = logits(r, 0);
        for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, logits(r, c));
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) z += std::exp(logits(r, c) - mx);
        const double lse = mx + std::log(z);
        for (std::size_t c = 0; c < k; ++c) {
            probs[r * k + c] = std::exp(logits(r, c) - lse);
            m[c] += probs[r * k + c] / static_cast<double>(n);
        }
        loglik += logits(r, targets[r]) - lse;
    }

    const double kl = kl_divergence(m, prior.probs());

    double correction = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        double row = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            const double p = probs[r * k + c];
            if (p == 0.0 || prior[c] == 0.0) continue;
            row += p * (std::log(prior[c]) - std::log(std::max(m[c], kEps0)));
        }
        correction += row;
    }
    correction /= static_cast<double>(n);
    return {loglik + correction, loglik - kl};
}

// ---------------------------------------------------------------------------
// Knowledge distillation

// Rows of `probs` raised to 1/T and renormalized, i.e. softmax(logits / T)
// expressed through the probabilities.
inline Tensor temper_probs(const Tensor& probs, double temperature) {
    if (temperature == 1.0) return probs;
    const std::size_t n = probs.rows(), k = probs.cols();
    std::vector<double> out(probs.size());
    for (std::size_t r = 0; r < n; ++r) {
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            const double p = probs[r * k + c];
            out[r * k + c] = p > 0.0 ? std::pow(p, 1.0 / temperature) : 0.0;
            z += out[r * k + c];
        }
        for (std::size_t c = 0; c < k; ++c) out[r * k + c] /= z;
    }
    return Tensor(probs.shape(), std::move(out));
}

/// alpha * CE + (1 - alpha) * mean_i D[student_i || teacher_i]. The
/// temperature softens both distributions inside the KL term only; the KL is
/// not rescaled by T^2.
inline ad::Var knowledge_distillation_loss(ad::Var student_logits, const Tensor& teacher_probs,
                                           std::span<const std::size_t> targets, const KDConfig& cfg) {
    cfg.validate();
    if (student_logits.value().shape() != teacher_probs.shape()) {
        throw ShapeError("knowledge_distillation_loss: student " + shape_str(student_logits.shape()) + " vs teacher " +
                         shape_str(teacher_probs.shape()));
    }
    const std::size_t n = teacher_probs.rows(), k = teacher_probs.cols();
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            if (teacher_probs(r, c) < 0.0) throw DomainError("knowledge_distillation_loss: negative teacher probability");
            s += teacher_probs(r, c);
        }
        if (std::abs(s - 1.0) > 1e-9) throw DomainError("knowledge_distillation_loss: teacher row does not sum to 1");
    }
    if (cfg.alpha == 1.0) return cross_entropy(student_logits, targets);

    ad::Var scaled = cfg.temperature == 1.0 ? student_logits : ad::scalar_mul(student_logits, 1.0 / cfg.temperature);
    ad::Var kl = mean_row_kl(ad::softmax(scaled), temper_probs(teacher_probs, cfg.temperature));
    if (cfg.alpha == 0.0) {
        check_targets(targets, n, k);
        return kl;
    }
    return cfg.alpha * cross_entropy(student_logits, targets) + (1.0 - cfg.alpha) * kl;
}

// ---------------------------------------------------------------------------
// GAN objectives. Discriminator outputs are probabilities (sigmoid applied
// upstream) and are clamped to [eps0, 1 - eps0] before any logarithm.

struct DiscriminatorLoss {
    ad::Var total;
    ad::Var regularizer;     // D[[1 - m, m] || prior], unweighted
    double mean_output = 0;  // m: mean discriminator output over real + fake
};

inline DiscriminatorLoss discriminator_loss(ad::Var d_real, ad::Var d_fake, const CategoricalPrior& prior, double gamma) {
    if (prior.size() != 2) throw InvalidArgument("discriminator_loss: prior must be over 2 outcomes");
    if (!(gamma >= 0.0)) throw InvalidArgument("discriminator_loss: gamma must be >= 0");
    const std::size_t nr = d_real.value().size(), nf = d_fake.value().size();
    if (nr == 0 || nf == 0) throw ShapeError("discriminator_loss: empty batch");

    ad::Var real_c = ad::clamp(d_real, kEps0, 1.0 - kEps0);
    ad::Var fake_c = ad::clamp(d_fake, kEps0, 1.0 - kEps0);
    ad::Var bce_real = -ad::mean(ad::log(real_c));
    ad::Var bce_fake = -ad::mean(ad::log(ad::scalar_add(-fake_c, 1.0)));

    ad::Var m = ad::scalar_mul(ad::sum(d_real) + ad::sum(d_fake), 1.0 / static_cast<double>(nr + nf));
    ad::Var p_d = ad::concat(ad::scalar_add(-m, 1.0), m);
    ad::Var reg = kl_divergence(p_d, prior);

    ad::Var total = bce_real + bce_fake;
    if (gamma != 0.0) total = total + gamma * reg;
    return {total, reg, m.value().item()};
}

// Non-saturating generator objective: BCE of D(G(z)) against label 1.
inline ad::Var generator_loss(ad::Var d_fake) {
    return -ad::mean(ad::log(ad::clamp(d_fake, kEps0, 1.0 - kEps0)));
}

struct GanLosses {
    ad::Var d_loss;
    ad::Var g_loss;
};

inline GanLosses gan_losses(ad::Var d_real, ad::Var d_fake, const CategoricalPrior& prior, double gamma) {
    return {discriminator_loss(d_real, d_fake, prior, gamma).total, generator_loss(d_fake)};
}

} // namespace densfix
