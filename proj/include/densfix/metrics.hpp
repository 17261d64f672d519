#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "densfix/errors.hpp"
#include "densfix/tensor.hpp"

namespace densfix {

/// Fraction of rows whose true label is not among the k highest-probability
/// classes. Ties are broken toward the lower class index, so a class ranks
/// ahead of the label when it has a strictly higher score, or an equal score
/// and a smaller index.
inline double topk_error(const Tensor& scores, std::span<const std::size_t> labels, std::size_t k) {
    if (scores.rank() != 2) throw ShapeError("topk_error: scores must be n x K");
    const std::size_t n = scores.rows(), classes = scores.cols();
    if (k < 1 || k > classes) throw InvalidArgument("topk_error: k must lie in [1, K]");
    if (labels.size() != n) throw ShapeError("topk_error: label count mismatch");
    if (n == 0) return 0.0;
    std::size_t misses = 0;
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t y = labels[r];
        if (y >= classes) throw InvalidArgument("topk_error: label out of range");
        const double s = scores(r, y);
        std::size_t ahead = 0;
        for (std::size_t c = 0; c < classes; ++c) {
            if (scores(r, c) > s || (scores(r, c) == s && c < y)) ++ahead;
        }
        if (ahead >= k) ++misses;
    }
    return static_cast<double>(misses) / static_cast<double>(n);
}

// Empirical (top-1) error.
inline double empirical_error(const Tensor& scores, std::span<const std::size_t> labels) {
    return topk_error(scores, labels, 1);
}

// Mean of -log softmax(logits)[label], evaluated without a graph.
inline double mean_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
    const std::size_t n = logits.rows(), k = logits.cols();
    if (labels.size() != n) throw ShapeError("mean_cross_entropy: label count mismatch");
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        double mx = logits(r, 0);
        for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, logits(r, c));
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) z += std::exp(logits(r, c) - mx);
        total += mx + std::log(z) - logits(r, labels[r]);
    }
    return total / static_cast<double>(n);
}

// Column means of a probability matrix.
inline std::vector<double> column_means(const Tensor& probs) {
    std::vector<double> m(probs.cols(), 0.0);
    for (std::size_t r = 0; r < probs.rows(); ++r)
        for (std::size_t c = 0; c < probs.cols(); ++c) m[c] += probs(r, c);
    for (double& x : m) x /= static_cast<double>(probs.rows());
    return m;
}

// Ranks with ties sharing their average rank (1-based).
inline std::vector<double> average_ranks(std::span<const double> xs) {
    std::vector<std::size_t> idx(xs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

/// Spearman rank correlation (Pearson correlation of average ranks). Returns
/// 0 when either side is constant.
inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("spearman: need two equal-length series of length >= 2");
    const auto rx = average_ranks(x), ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

} // namespace densfix
