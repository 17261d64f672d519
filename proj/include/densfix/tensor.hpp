#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "densfix/errors.hpp"

namespace densfix {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

// Shortest decimal form that reads back to the same double.
inline std::string shortest_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

// Throws NonFiniteError naming `where` if any value is NaN or infinite.
inline void ensure_finite(std::span<const double> values, std::string_view where) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            std::ostringstream os;
            os << where << ": non-finite value " << values[i] << " at flat index " << i;
            throw NonFiniteError(os.str());
        }
    }
}

/// Dense row-major array of 64-bit floats. Rank 0 (empty shape) is a scalar.
///
/// Every constructor validates that the shape matches the number of values
/// and that all values are finite.
class Tensor {
public:
    Tensor() : values_(1, 0.0) {}

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {
        ensure_finite(values_, "Tensor");
    }

    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        if (shape_numel(shape_) != values_.size()) {
            throw ShapeError("Tensor: shape " + shape_str(shape_) + " needs " +
                             std::to_string(shape_numel(shape_)) + " values, got " +
                             std::to_string(values_.size()));
        }
        ensure_finite(values_, "Tensor");
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    static Tensor vector(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor(Shape{n}, std::move(v));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> v;
        v.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw ShapeError("Tensor::matrix: ragged rows");
            v.insert(v.end(), row.begin(), row.end());
        }
        return Tensor(Shape{r, c}, std::move(v));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return values_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    // For a rank-2 tensor; rank-1 tensors are treated as a single row.
    std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 1); }

    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }
    const double* data() const noexcept { return values_.data(); }
    double* data() noexcept { return values_.data(); }

    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }

    double item() const {
        if (values_.size() != 1) throw ShapeError("Tensor::item on tensor of shape " + shape_str(shape_));
        return values_[0];
    }

    Tensor reshaped(Shape shape) const {
        return Tensor(std::move(shape), values_);
    }

    // Rows of a rank-2 tensor picked by index, in the given order.
    Tensor gather_rows(std::span<const std::size_t> idx) const {
        const std::size_t c = cols();
        std::vector<double> out;
        out.reserve(idx.size() * c);
        for (std::size_t r : idx) {
            if (r >= rows()) throw ShapeError("Tensor::gather_rows: row index out of range");
            out.insert(out.end(), values_.begin() + static_cast<std::ptrdiff_t>(r * c),
                       values_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
        }
        return Tensor(Shape{idx.size(), c}, std::move(out));
    }

    void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<double> values_;
};

} // namespace densfix
