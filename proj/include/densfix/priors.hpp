#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "densfix/errors.hpp"
#include "densfix/tensor.hpp"

namespace densfix {

// Neumaier-compensated sum.
inline double compensated_sum(std::span<const double> xs) noexcept {
    double s = 0.0, c = 0.0;
    for (double x : xs) {
        const double t = s + x;
        if (std::abs(s) >= std::abs(x))
            c += (s - t) + x;
        else
            c += (x - t) + s;
        s = t;
    }
    return s + c;
}

/// Probability vector over K >= 2 classes. Components may be exactly zero;
/// losses that need a strictly positive prior check that themselves.
class CategoricalPrior {
public:
    static constexpr double kSumTolerance = 1e-12;

    explicit CategoricalPrior(std::vector<double> probs) : probs_(std::move(probs)) {
        if (probs_.size() < 2) throw InvalidArgument("CategoricalPrior: need at least 2 classes");
        for (double p : probs_) {
            if (!std::isfinite(p) || p < 0.0) throw DomainError("CategoricalPrior: component outside [0, 1]");
        }
        const double s = compensated_sum(probs_);
        if (std::abs(s - 1.0) > kSumTolerance) {
            throw DomainError("CategoricalPrior: components sum to " + std::to_string(s) + ", not 1");
        }
    }

    std::size_t size() const noexcept { return probs_.size(); }
    double operator[](std::size_t i) const { return probs_[i]; }
    std::span<const double> probs() const noexcept { return probs_; }
    const std::vector<double>& vec() const noexcept { return probs_; }

    bool strictly_positive() const noexcept {
        return std::all_of(probs_.begin(), probs_.end(), [](double p) { return p > 0.0; });
    }

    bool operator==(const CategoricalPrior&) const = default;

private:
    std::vector<double> probs_;
};

// Empirical class frequencies: component i is count(i) / N.
inline CategoricalPrior estimate_prior(std::span<const std::size_t> labels, std::size_t num_classes) {
    if (labels.empty()) throw InvalidArgument("estimate_prior: empty label set");
    if (num_classes < 2) throw InvalidArgument("estimate_prior: need at least 2 classes");
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t y : labels) {
        if (y >= num_classes) {
            throw InvalidArgument("estimate_prior: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
        }
        ++counts[y];
    }
    std::vector<double> p(num_classes);
    const double n = static_cast<double>(labels.size());
    for (std::size_t i = 0; i < num_classes; ++i) p[i] = static_cast<double>(counts[i]) / n;
    return CategoricalPrior(std::move(p));
}

inline CategoricalPrior uniform_prior(std::size_t num_classes) {
    if (num_classes < 2) throw InvalidArgument("uniform_prior: need at least 2 classes");
    return CategoricalPrior(std::vector<double>(num_classes, 1.0 / static_cast<double>(num_classes)));
}

// [1 - xi, xi]: index 1 is the "positive" outcome with probability xi.
inline CategoricalPrior bernoulli_prior(double xi) {
    if (!(xi > 0.0 && xi < 1.0)) throw DomainError("bernoulli_prior: xi must lie in (0, 1)");
    return CategoricalPrior({1.0 - xi, xi});
}

// Regularization strength for a uniform class prior over K classes, 1/(K-1)^2.
inline double eta_uniform(std::size_t num_classes) {
    if (num_classes < 2) throw InvalidArgument("eta_uniform: need K >= 2");
    const double km1 = static_cast<double>(num_classes - 1);
    return 1.0 / (km1 * km1);
}

// Regularization strength for a Bernoulli(xi) class prior, 1/(xi(1-xi)).
inline double eta_bernoulli(double xi) {
    if (!(xi > 0.0 && xi < 1.0)) throw DomainError("eta_bernoulli: xi must lie in (0, 1)");
    return 1.0 / (xi * (1.0 - xi));
}

struct EtaCurves {
    std::vector<std::pair<std::size_t, double>> uniform;  // (K, eta)
    std::vector<std::pair<double, double>> bernoulli;     // (xi, eta)
};

inline EtaCurves emit_eta_curves(std::size_t k_min, std::size_t k_max, std::span<const double> xi_grid) {
    if (k_min < 2 || k_max < k_min) throw InvalidArgument("emit_eta_curves: K range must satisfy 2 <= k_min <= k_max");
    if (xi_grid.empty()) throw InvalidArgument("emit_eta_curves: empty xi grid");
    EtaCurves out;
    for (std::size_t k = k_min; k <= k_max; ++k) out.uniform.emplace_back(k, eta_uniform(k));
    for (double xi : xi_grid) out.bernoulli.emplace_back(xi, eta_bernoulli(xi));
    return out;
}

// `points` evenly spaced values from lo to hi inclusive (lo alone if points == 1).
inline std::vector<double> linear_grid(double lo, double hi, std::size_t points) {
    if (points == 0) throw InvalidArgument("linear_grid: zero points");
    std::vector<double> g(points);
    for (std::size_t i = 0; i < points; ++i) {
        g[i] = points == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Prior specification as written in configuration files:
//   uniform | bernoulli:<xi> | estimate | p0,p1,...,pK-1

struct PriorSpec {
    struct Uniform {};
    struct Bernoulli {
        double xi;
    };
    struct Estimate {};
    struct Explicit {
        std::vector<double> probs;
    };
    std::variant<Uniform, Bernoulli, Estimate, Explicit> kind = Uniform{};

    static PriorSpec uniform() { return {Uniform{}}; }
    static PriorSpec estimate() { return {Estimate{}}; }
};

namespace detail {

inline double parse_double(std::string_view s, std::string_view what) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
        throw InvalidArgument(std::string(what) + ": not a number: '" + std::string(s) + "'");
    }
    return v;
}

} // namespace detail

inline PriorSpec parse_prior_spec(std::string_view text) {
    if (text == "uniform") return PriorSpec::uniform();
    if (text == "estimate") return PriorSpec::estimate();
    if (text.starts_with("bernoulli:")) {
        const double xi = detail::parse_double(text.substr(10), "prior");
        if (!(xi > 0.0 && xi < 1.0)) throw DomainError("prior: bernoulli xi must lie in (0, 1)");
        return {PriorSpec::Bernoulli{xi}};
    }
    PriorSpec::Explicit e;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = text.find(',', start);
        const std::size_t end = comma == std::string_view::npos ? text.size() : comma;
        e.probs.push_back(detail::parse_double(text.substr(start, end - start), "prior"));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    CategoricalPrior validated(e.probs); // throws on malformed vectors
    return {std::move(e)};
}

inline std::string to_string(const PriorSpec& spec) {
    struct Visitor {
        std::string operator()(const PriorSpec::Uniform&) const { return "uniform"; }
        std::string operator()(const PriorSpec::Estimate&) const { return "estimate"; }
        std::string operator()(const PriorSpec::Bernoulli& b) const { return "bernoulli:" + shortest_double(b.xi); }
        std::string operator()(const PriorSpec::Explicit& e) const {
            std::string s;
            for (std::size_t i = 0; i < e.probs.size(); ++i) {
                if (i) s += ',';
                s += shortest_double(e.probs[i]);
            }
            return s;
        }
    };
    return std::visit(Visitor{}, spec.kind);
}

// Turns a spec into a concrete prior over `num_classes`; `labels` feeds the
// estimate variant.
inline CategoricalPrior resolve_prior(const PriorSpec& spec, std::size_t num_classes,
                                      std::span<const std::size_t> labels = {}) {
    struct Visitor {
        std::size_t k;
        std::span<const std::size_t> labels;
        CategoricalPrior operator()(const PriorSpec::Uniform&) const { return uniform_prior(k); }
        CategoricalPrior operator()(const PriorSpec::Estimate&) const { return estimate_prior(labels, k); }
        CategoricalPrior operator()(const PriorSpec::Bernoulli& b) const {
            if (k != 2) throw InvalidArgument("prior: bernoulli prior needs exactly 2 classes");
            return bernoulli_prior(b.xi);
        }
        CategoricalPrior operator()(const PriorSpec::Explicit& e) const {
            if (e.probs.size() != k) {
                throw InvalidArgument("prior: explicit vector has " + std::to_string(e.probs.size()) +
                                      " components for " + std::to_string(k) + " classes");
            }
            return CategoricalPrior(e.probs);
        }
    };
    return std::visit(Visitor{num_classes, labels}, spec.kind);
}

} // namespace densfix
