#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "densfix/errors.hpp"
#include "densfix/rng.hpp"
#include "densfix/tensor.hpp"

namespace densfix {

using Labels = std::vector<std::size_t>;

struct Dataset {
    Tensor inputs;                  // [N x d]
    std::optional<Labels> labels;   // loss-facing labels; absent for unlabeled sets
    std::size_t num_classes = 0;
    std::string provenance;
    // Ground truth kept for evaluation only (unlabeled splits, ring modes).
    // Training code never reads it.
    std::optional<Labels> sealed_labels;
    std::vector<std::string> class_names;

    std::size_t size() const { return inputs.rows(); }
    std::size_t dim() const { return inputs.cols(); }
    bool labeled() const { return labels.has_value(); }

    const Labels& require_labels() const {
        if (!labels) throw InvalidArgument("dataset '" + provenance + "' carries no labels");
        return *labels;
    }

    void validate() const {
        if (inputs.rank() != 2 || inputs.rows() == 0 || inputs.cols() == 0) throw ShapeError("Dataset: need N >= 1 and d >= 1");
        for (const auto* ls : {labels ? &*labels : nullptr, sealed_labels ? &*sealed_labels : nullptr}) {
            if (!ls) continue;
            if (ls->size() != size()) throw ShapeError("Dataset: label count does not match rows");
            for (std::size_t y : *ls) {
                if (y >= num_classes) throw InvalidArgument("Dataset: label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
            }
        }
    }

    Dataset subset(std::span<const std::size_t> idx) const {
        Dataset out;
        out.inputs = inputs.gather_rows(idx);
        out.num_classes = num_classes;
        out.provenance = provenance;
        out.class_names = class_names;
        auto pick = [&](const std::optional<Labels>& src) -> std::optional<Labels> {
            if (!src) return std::nullopt;
            Labels l;
            l.reserve(idx.size());
            for (std::size_t i : idx) l.push_back((*src)[i]);
            return l;
        };
        out.labels = pick(labels);
        out.sealed_labels = pick(sealed_labels);
        return out;
    }
};

/// Splits n into integer counts proportional to weights: floor of each share,
/// then the remaining units go to the largest fractional parts (lower index
/// wins ties). Counts always sum to n.
inline std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t n) {
    if (weights.empty()) throw InvalidArgument("largest_remainder: no weights");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("class weights must be finite and non-negative");
        total += w;
    }
    if (!(total > 0.0)) throw InvalidArgument("class weights sum to zero");
    std::vector<std::size_t> counts(weights.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double share = weights[i] / total * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(std::floor(share));
        assigned += counts[i];
        rem.emplace_back(share - std::floor(share), i);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t j = 0; assigned < n; ++j, ++assigned) ++counts[rem[j % rem.size()].second];
    return counts;
}

// ---------------------------------------------------------------------------
// Generators

struct MixtureSpec {
    std::size_t num_classes = 2;
    std::size_t n = 1000;                 // total samples
    std::vector<double> class_weights;    // empty = balanced; otherwise must sum to 1
    std::size_t dim = 2;
    double separation = 3.0;              // distance between neighbouring class centers
    double noise_std = 1.0;
    std::uint64_t seed = 0;
};

/// Class centers. With d >= 2 they sit on a circle in the first two
/// coordinates, neighbours `separation` apart; with d == 1 on a line.
inline std::vector<std::vector<double>> mixture_centers(std::size_t num_classes, std::size_t dim, double separation) {
    std::vector<std::vector<double>> c(num_classes, std::vector<double>(dim, 0.0));
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (dim == 1) {
            c[k][0] = separation * (static_cast<double>(k) - 0.5 * static_cast<double>(num_classes - 1));
        } else {
            const double radius = separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(num_classes)));
            const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(num_classes);
            c[k][0] = radius * std::cos(angle);
            c[k][1] = radius * std::sin(angle);
        }
    }
    return c;
}

inline Dataset make_gaussian_mixture(const MixtureSpec& spec) {
    if (spec.num_classes < 2) throw InvalidArgument("make_gaussian_mixture: need K >= 2");
    if (spec.dim < 1 || spec.n < 1) throw InvalidArgument("make_gaussian_mixture: need n >= 1 and d >= 1");
    std::vector<double> weights = spec.class_weights;
    if (weights.empty()) {
        weights.assign(spec.num_classes, 1.0);
    } else {
        if (weights.size() != spec.num_classes) throw InvalidArgument("make_gaussian_mixture: one weight per class required");
        double s = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw InvalidArgument("make_gaussian_mixture: negative class weight");
            s += w;
        }
        if (std::abs(s - 1.0) > 1e-9) throw InvalidArgument("make_gaussian_mixture: class weights must sum to 1");
    }
    const auto counts = largest_remainder(weights, spec.n);
    const auto centers = mixture_centers(spec.num_classes, spec.dim, spec.separation);

    Rng rng(spec.seed);
    std::vector<double> x;
    x.reserve(spec.n * spec.dim);
    Labels y;
    y.reserve(spec.n);
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
        for (std::size_t i = 0; i < counts[k]; ++i) {
            for (std::size_t j = 0; j < spec.dim; ++j) x.push_back(centers[k][j] + spec.noise_std * rng.normal());
            y.push_back(k);
        }
    }
    std::vector<std::size_t> order(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) order[i] = i;
    rng.shuffle(std::span(order));

    Dataset d;
    d.inputs = Tensor(Shape{spec.n, spec.dim}, std::move(x)).gather_rows(order);
    Labels shuffled(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) shuffled[i] = y[order[i]];
    d.labels = std::move(shuffled);
    d.num_classes = spec.num_classes;
    d.provenance = "gaussian_mixture";
    return d;
}

inline std::vector<std::pair<double, double>> ring_centers(std::size_t modes, double radius) {
    std::vector<std::pair<double, double>> c;
    for (std::size_t k = 0; k < modes; ++k) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(modes);
        c.emplace_back(radius * std::cos(angle), radius * std::sin(angle));
    }
    return c;
}

/// Unlabeled 2-D points around `modes` centers equally spaced on a circle.
/// Mode sizes are balanced by largest-remainder allocation; the mode of each
/// point is kept in sealed_labels.
inline Dataset make_ring_of_gaussians(std::size_t modes, std::size_t n, double radius, double sigma, std::uint64_t seed) {
    if (modes < 2) throw InvalidArgument("make_ring_of_gaussians: need at least 2 modes");
    if (n < 1) throw InvalidArgument("make_ring_of_gaussians: need n >= 1");
    const auto centers = ring_centers(modes, radius);
    const auto counts = largest_remainder(std::vector<double>(modes, 1.0), n);
    Rng rng(seed);
    std::vector<double> x;
    x.reserve(2 * n);
    Labels mode_of;
    for (std::size_t k = 0; k < modes; ++k) {
        for (std::size_t i = 0; i < counts[k]; ++i) {
            x.push_back(centers[k].first + sigma * rng.normal());
            x.push_back(centers[k].second + sigma * rng.normal());
            mode_of.push_back(k);
        }
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(std::span(order));

    Dataset d;
    d.inputs = Tensor(Shape{n, 2}, std::move(x)).gather_rows(order);
    Labels sealed(n);
    for (std::size_t i = 0; i < n; ++i) sealed[i] = mode_of[order[i]];
    d.sealed_labels = std::move(sealed);
    d.num_classes = modes;
    d.provenance = "ring_of_gaussians";
    return d;
}

// ---------------------------------------------------------------------------
// Labeled / unlabeled split

struct SemiSplit {
    Dataset labeled;
    Dataset unlabeled;  // labels removed, kept in sealed_labels
};

/// Stratified split. The labeled part holds round(fraction * N) samples
/// distributed over classes by largest remainder, so every class is off by
/// at most one sample from fraction * n_class. Both parts keep the original
/// sample order.
inline SemiSplit split_semi(const Dataset& data, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidArgument("split_semi: fraction must lie in (0, 1)");
    const Labels& y = data.require_labels();
    const std::size_t k = data.num_classes;
    std::vector<std::vector<std::size_t>> by_class(k);
    for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(i);

    std::vector<double> weights(k);
    for (std::size_t c = 0; c < k; ++c) weights[c] = static_cast<double>(by_class[c].size());
    const auto n_labeled = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(y.size())));
    const auto per_class = largest_remainder(weights, n_labeled);

    Rng rng(seed);
    std::vector<char> is_labeled(y.size(), 0);
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t nc = by_class[c].size();
        if (nc == 0) continue;
        if (per_class[c] < 1 || per_class[c] >= nc) {
            throw InvalidArgument("split_semi: class " + std::to_string(c) + " has " + std::to_string(nc) +
                                  " samples, too few to stratify at fraction " + std::to_string(fraction));
        }
        auto idx = by_class[c];
        rng.shuffle(std::span(idx));
        for (std::size_t j = 0; j < per_class[c]; ++j) is_labeled[idx[j]] = 1;
    }
    std::vector<std::size_t> lab, unl;
    for (std::size_t i = 0; i < y.size(); ++i) (is_labeled[i] ? lab : unl).push_back(i);

    SemiSplit s{data.subset(lab), data.subset(unl)};
    s.labeled.provenance = data.provenance + "/labeled";
    s.unlabeled.provenance = data.provenance + "/unlabeled";
    s.unlabeled.sealed_labels = std::move(s.unlabeled.labels);
    s.unlabeled.labels.reset();
    return s;
}

// ---------------------------------------------------------------------------
// CSV ingestion
//
// Comma separated, header row, '.' decimal separator. Every column except the
// label column is a feature. Label strings are mapped to indices by sorting
// the distinct values: numerically when all of them parse as numbers,
// lexicographically otherwise.

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::optional<double> to_number(std::string_view s) {
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

} // namespace detail

inline Dataset parse_csv_dataset(std::string_view text, std::string_view label_column, std::string_view source = "csv") {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        const auto line = detail::trim(text.substr(start, nl - start));
        if (!line.empty()) lines.push_back(line);
        start = nl + 1;
    }
    if (lines.empty()) throw CsvEmptyFile(std::string(source) + ": empty file");
    const auto header = detail::split_commas(lines[0]);
    if (lines.size() < 2) throw CsvEmptyFile(std::string(source) + ": header but no data rows");

    std::size_t label_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == label_column) label_idx = i;
    }
    if (label_idx == header.size()) throw CsvError(std::string(source) + ": no column named '" + std::string(label_column) + "'");
    if (header.size() < 2) throw CsvError(std::string(source) + ": no feature columns");

    const std::size_t n = lines.size() - 1, d = header.size() - 1;
    std::vector<double> x;
    x.reserve(n * d);
    std::vector<std::string> raw_labels;
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const auto cells = detail::split_commas(lines[r]);
        if (cells.size() != header.size()) {
            throw CsvRaggedRow(std::string(source) + ": row " + std::to_string(r + 1) + " has " + std::to_string(cells.size()) +
                               " fields, header has " + std::to_string(header.size()));
        }
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (c == label_idx) {
                raw_labels.emplace_back(cells[c]);
                continue;
            }
            const auto v = detail::to_number(cells[c]);
            if (!v) {
                throw CsvNonNumeric(std::string(source) + ": row " + std::to_string(r + 1) + ", column '" + std::string(header[c]) +
                                    "': not a number: '" + std::string(cells[c]) + "'");
            }
            x.push_back(*v);
        }
    }

    std::vector<std::string> names = raw_labels;
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    const bool numeric = std::all_of(names.begin(), names.end(), [](const std::string& s) { return detail::to_number(s).has_value(); });
    if (numeric) {
        std::stable_sort(names.begin(), names.end(),
                         [](const std::string& a, const std::string& b) { return *detail::to_number(a) < *detail::to_number(b); });
    }
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < names.size(); ++i) index.emplace(names[i], i);
    Labels y;
    y.reserve(n);
    for (const auto& s : raw_labels) y.push_back(index.at(s));

    Dataset ds;
    ds.inputs = Tensor(Shape{n, d}, std::move(x));
    ds.labels = std::move(y);
    ds.num_classes = std::max<std::size_t>(names.size(), 2);
    ds.class_names = std::move(names);
    ds.provenance = std::string(source);
    return ds;
}

inline Dataset load_csv_dataset(const std::string& path, std::string_view label_column) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CsvError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_csv_dataset(ss.str(), label_column, path);
}

// %.17g: enough digits to round-trip every double.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_csv_dataset(std::ostream& os, const Dataset& ds, std::string_view label_column = "label") {
    for (std::size_t j = 0; j < ds.dim(); ++j) os << 'x' << j << ',';
    os << label_column << '\n';
    const Labels* y = ds.labels ? &*ds.labels : (ds.sealed_labels ? &*ds.sealed_labels : nullptr);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t j = 0; j < ds.dim(); ++j) os << format_double(ds.inputs(i, j)) << ',';
        if (y) {
            const std::size_t c = (*y)[i];
            if (c < ds.class_names.size())
                os << ds.class_names[c];
            else
                os << c;
        }
        os << '\n';
    }
}

inline void write_csv_dataset(const std::string& path, const Dataset& ds, std::string_view label_column = "label") {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path);
    write_csv_dataset(os, ds, label_column);
}

} // namespace densfix
