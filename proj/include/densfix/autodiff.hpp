#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// A Graph owns every node created while evaluating an expression. Nodes are
// appended in evaluation order, so the tape order is a topological order and
// backward() is a single reverse sweep that visits each node once. A graph is
// meant to live for one forward/backward pass and is confined to one thread.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "densfix/errors.hpp"
#include "densfix/tensor.hpp"

namespace densfix::ad {

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;
    Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

    Graph& graph() const { return *graph_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return graph_ != nullptr; }

    inline const Tensor& value() const;
    inline const Tensor& grad() const;
    const Shape& shape() const { return value().shape(); }

private:
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

class Graph {
public:
    // Accumulates the node's gradient into its parents' gradients.
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    // Leaf whose gradient is tracked.
    Var parameter(Tensor value) { return push(std::move(value), {}, {}, true); }

    // Leaf without gradient tracking (data, targets, frozen weights).
    Var constant(Tensor value) { return push(std::move(value), {}, {}, false); }

    // Used by operations: registers a result node and its gradient rule.
    Var make(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
        bool needs = false;
        for (std::size_t p : parents) needs = needs || nodes_.at(p).requires_grad;
        if (!needs) backward = nullptr;
        return push(std::move(value), std::move(parents), std::move(backward), needs);
    }

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    // Meaningful after backward(); holds a zero scalar before that.
    const Tensor& grad(std::size_t id) const { return nodes_.at(id).grad; }
    const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_.at(id).parents; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Adds `delta` into the gradient of node `id` if it tracks gradients.
    void accumulate(std::size_t id, std::span<const double> delta) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        auto g = n.grad.values();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
    }

    std::span<double> grad_buffer(std::size_t id) { return nodes_[id].grad.values(); }

    /// Reverse sweep from a scalar root. Every node's gradient is reset first,
    /// so nodes the root does not depend on end with zero gradient.
    void backward(Var root) {
        if (&root.graph() != this) throw InvalidArgument("backward: root belongs to another graph");
        const Tensor& rv = nodes_.at(root.id()).value;
        if (rv.size() != 1) throw ShapeError("backward: root must be scalar, got shape " + shape_str(rv.shape()));
        for (auto& n : nodes_) n.grad = Tensor(n.value.shape(), 0.0);
        nodes_[root.id()].grad[0] = 1.0;
        for (std::size_t i = root.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.requires_grad && n.backward) n.backward(*this, i);
        }
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> parents;
        BackwardFn backward;
        bool requires_grad = false;
    };

    Var push(Tensor value, std::vector<std::size_t> parents, BackwardFn backward, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.parents = std::move(parents);
        n.backward = std::move(backward);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    // deque: references to values stay valid while operations append nodes.
    std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }
inline const Tensor& Var::grad() const { return graph_->grad(id_); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;
using CVec = Eigen::Map<const Eigen::VectorXd>;

inline Graph& same_graph(const Var& a, const Var& b, std::string_view op) {
    if (&a.graph() != &b.graph()) throw InvalidArgument(std::string(op) + ": operands from different graphs");
    return a.graph();
}

inline void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

inline void require_rank2(const Tensor& a, std::string_view op) {
    if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(a.shape()));
}

inline Tensor checked(Shape shape, std::vector<double> v, std::string_view op) {
    ensure_finite(v, op);
    return Tensor(std::move(shape), std::move(v));
}

// Elementwise y = f(x) with dy/dx = df(x, y).
template <typename F, typename DF>
Var unary(Var a, std::string_view op, F f, DF df) {
    const Tensor& x = a.value();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x[i]);
    Tensor out = checked(x.shape(), std::move(y), op);
    const std::size_t pa = a.id();
    return a.graph().make(std::move(out), {pa}, [pa, df](Graph& g, std::size_t self) {
        const Tensor& xv = g.value(pa);
        const Tensor& yv = g.value(self);
        const Tensor& gy = g.grad(self);
        std::vector<double> gx(xv.size());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = gy[i] * df(xv[i], yv[i]);
        g.accumulate(pa, gx);
    });
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(Var a, Var b) {
    Graph& g = detail::same_graph(a, b, "add");
    detail::require_same_shape(a.value(), b.value(), "add");
    std::vector<double> v(a.value().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
    const std::size_t pa = a.id(), pb = b.id();
    return g.make(detail::checked(a.shape(), std::move(v), "add"), {pa, pb}, [pa, pb](Graph& gr, std::size_t self) {
        const auto gy = gr.grad(self).values();
        gr.accumulate(pa, gy);
        gr.accumulate(pb, gy);
    });
}

inline Var sub(Var a, Var b) {
    Graph& g = detail::same_graph(a, b, "sub");
    detail::require_same_shape(a.value(), b.value(), "sub");
    std::vector<double> v(a.value().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
    const std::size_t pa = a.id(), pb = b.id();
    return g.make(detail::checked(a.shape(), std::move(v), "sub"), {pa, pb}, [pa, pb](Graph& gr, std::size_t self) {
        const auto gy = gr.grad(self).values();
        gr.accumulate(pa, gy);
        std::vector<double> neg(gy.begin(), gy.end());
        for (double& x : neg) x = -x;
        gr.accumulate(pb, neg);
    });
}

// Hadamard product.
inline Var mul(Var a, Var b) {
    Graph& g = detail::same_graph(a, b, "mul");
    detail::require_same_shape(a.value(), b.value(), "mul");
    std::vector<double> v(a.value().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
    const std::size_t pa = a.id(), pb = b.id();
    return g.make(detail::checked(a.shape(), std::move(v), "mul"), {pa, pb}, [pa, pb](Graph& gr, std::size_t self) {
        const Tensor& gy = gr.grad(self);
        const Tensor& av = gr.value(pa);
        const Tensor& bv = gr.value(pb);
        std::vector<double> ga(gy.size()), gb(gy.size());
        for (std::size_t i = 0; i < gy.size(); ++i) {
            ga[i] = gy[i] * bv[i];
            gb[i] = gy[i] * av[i];
        }
        gr.accumulate(pa, ga);
        gr.accumulate(pb, gb);
    });
}

inline Var scalar_mul(Var a, double c) {
    return detail::unary(a, "scalar_mul", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var scalar_add(Var a, double c) {
    return detail::unary(a, "scalar_add", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var neg(Var a) { return scalar_mul(a, -1.0); }

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var a) { return scalar_mul(a, c); }
inline Var operator*(Var a, double c) { return scalar_mul(a, c); }
inline Var operator-(Var a) { return neg(a); }

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

// Subgradient at exactly 0 is 0.
inline Var relu(Var a) {
    return detail::unary(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(Var a) {
    return detail::unary(
        a, "sigmoid",
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(Var a) {
    return detail::unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

// Natural log; every input must be strictly positive.
inline Var log(Var a) {
    for (double x : a.value().values()) {
        if (!(x > 0.0)) throw DomainError("log: non-positive input " + std::to_string(x));
    }
    return detail::unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// log(max(x, floor)); the gradient is zero below the floor.
inline Var log_floor(Var a, double floor) {
    if (!(floor > 0.0)) throw DomainError("log_floor: floor must be positive");
    return detail::unary(
        a, "log_floor", [floor](double x) { return std::log(std::max(x, floor)); },
        [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

// Gradient passes only strictly inside (lo, hi).
inline Var clamp(Var a, double lo, double hi) {
    if (!(lo <= hi)) throw InvalidArgument("clamp: lo > hi");
    return detail::unary(
        a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Var sum(Var a) {
    double s = 0.0;
    for (double x : a.value().values()) s += x;
    const std::size_t pa = a.id();
    return a.graph().make(detail::checked(Shape{}, {s}, "sum"), {pa}, [pa](Graph& g, std::size_t self) {
        const double gy = g.grad(self)[0];
        std::vector<double> gx(g.value(pa).size(), gy);
        g.accumulate(pa, gx);
    });
}

inline Var mean(Var a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw ShapeError("mean: empty tensor");
    return scalar_mul(sum(a), 1.0 / static_cast<double>(n));
}

// Column means of an n x K matrix: output [K].
inline Var mean_rows(Var a) {
    detail::require_rank2(a.value(), "mean_rows");
    const std::size_t n = a.value().rows(), k = a.value().cols();
    if (n == 0) throw ShapeError("mean_rows: no rows");
    std::vector<double> m(k, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < k; ++c) m[c] += a.value()(r, c);
    for (double& x : m) x /= static_cast<double>(n);
    const std::size_t pa = a.id();
    return a.graph().make(detail::checked(Shape{k}, std::move(m), "mean_rows"), {pa}, [pa, n, k](Graph& g, std::size_t self) {
        const Tensor& gy = g.grad(self);
        std::vector<double> gx(n * k);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < k; ++c) gx[r * k + c] = gy[c] / static_cast<double>(n);
        g.accumulate(pa, gx);
    });
}

inline Var reshape(Var a, Shape shape) {
    if (shape_numel(shape) != a.value().size()) throw ShapeError("reshape: element count changes");
    const std::size_t pa = a.id();
    return a.graph().make(a.value().reshaped(std::move(shape)), {pa}, [pa](Graph& g, std::size_t self) {
        g.accumulate(pa, g.grad(self).values());
    });
}

// Flattened concatenation of two tensors into a rank-1 tensor.
inline Var concat(Var a, Var b) {
    Graph& g = detail::same_graph(a, b, "concat");
    const std::size_t na = a.value().size(), nb = b.value().size();
    std::vector<double> v;
    v.reserve(na + nb);
    v.insert(v.end(), a.value().values().begin(), a.value().values().end());
    v.insert(v.end(), b.value().values().begin(), b.value().values().end());
    const std::size_t pa = a.id(), pb = b.id();
    return g.make(Tensor(Shape{na + nb}, std::move(v)), {pa, pb}, [pa, pb, na, nb](Graph& gr, std::size_t self) {
        const auto gy = gr.grad(self).values();
        gr.accumulate(pa, gy.subspan(0, na));
        gr.accumulate(pb, gy.subspan(na, nb));
    });
}

// out[i] = a[i, idx[i]] for an n x K matrix.
inline Var pick(Var a, std::span<const std::size_t> idx) {
    detail::require_rank2(a.value(), "pick");
    const std::size_t n = a.value().rows(), k = a.value().cols();
    if (idx.size() != n) throw ShapeError("pick: index count does not match rows");
    std::vector<double> v(n);
    for (std::size_t r = 0; r < n; ++r) {
        if (idx[r] >= k) throw InvalidArgument("pick: index " + std::to_string(idx[r]) + " out of range");
        v[r] = a.value()(r, idx[r]);
    }
    std::vector<std::size_t> saved(idx.begin(), idx.end());
    const std::size_t pa = a.id();
    return a.graph().make(Tensor(Shape{n}, std::move(v)), {pa}, [pa, k, saved = std::move(saved)](Graph& g, std::size_t self) {
        const Tensor& gy = g.grad(self);
        std::vector<double> gx(saved.size() * k, 0.0);
        for (std::size_t r = 0; r < saved.size(); ++r) gx[r * k + saved[r]] = gy[r];
        g.accumulate(pa, gx);
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
    Graph& g = detail::same_graph(a, b, "matmul");
    detail::require_rank2(a.value(), "matmul");
    detail::require_rank2(b.value(), "matmul");
    const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().cols();
    if (b.value().rows() != k) {
        throw ShapeError("matmul: inner extents differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<double> out(m * n);
    detail::MMap(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
        detail::CMap(a.value().data(), m, k) * detail::CMap(b.value().data(), k, n);
    const std::size_t pa = a.id(), pb = b.id();
    return g.make(detail::checked(Shape{m, n}, std::move(out), "matmul"), {pa, pb}, [pa, pb, m, k, n](Graph& gr, std::size_t self) {
        detail::CMap gy(gr.grad(self).data(), m, n);
        if (gr.requires_grad(pa)) {
            detail::MMap ga(gr.grad_buffer(pa).data(), m, k);
            ga.noalias() += gy * detail::CMap(gr.value(pb).data(), k, n).transpose();
        }
        if (gr.requires_grad(pb)) {
            detail::MMap gb(gr.grad_buffer(pb).data(), k, n);
            gb.noalias() += detail::CMap(gr.value(pa).data(), m, k).transpose() * gy;
        }
    });
}

// y = x W^T + b with x [n x in], W [out x in], b [out].
inline Var linear(Var x, Var w, Var b) {
    Graph& g = detail::same_graph(x, w, "linear");
    detail::same_graph(x, b, "linear");
    detail::require_rank2(x.value(), "linear");
    detail::require_rank2(w.value(), "linear");
    const std::size_t n = x.value().rows(), in = x.value().cols(), out = w.value().rows();
    if (w.value().cols() != in) {
        throw ShapeError("linear: input width " + std::to_string(in) + " does not match weight " + shape_str(w.shape()));
    }
    if (b.value().rank() != 1 || b.value().size() != out) throw ShapeError("linear: bias shape mismatch");
    std::vector<double> y(n * out);
    detail::MMap ym(y.data(), n, out);
    ym.noalias() = detail::CMap(x.value().data(), n, in) * detail::CMap(w.value().data(), out, in).transpose();
    ym.rowwise() += detail::CVec(b.value().data(), out).transpose();
    const std::size_t px = x.id(), pw = w.id(), pb = b.id();
    return g.make(detail::checked(Shape{n, out}, std::move(y), "linear"), {px, pw, pb},
                  [px, pw, pb, n, in, out](Graph& gr, std::size_t self) {
                      detail::CMap gy(gr.grad(self).data(), n, out);
                      if (gr.requires_grad(px)) {
                          detail::MMap gx(gr.grad_buffer(px).data(), n, in);
                          gx.noalias() += gy * detail::CMap(gr.value(pw).data(), out, in);
                      }
                      if (gr.requires_grad(pw)) {
                          detail::MMap gw(gr.grad_buffer(pw).data(), out, in);
                          gw.noalias() += gy.transpose() * detail::CMap(gr.value(px).data(), n, in);
                      }
                      if (gr.requires_grad(pb)) {
                          Eigen::Map<Eigen::VectorXd> gb(gr.grad_buffer(pb).data(), static_cast<Eigen::Index>(out));
                          gb += gy.colwise().sum().transpose();
                      }
                  });
}

// a [n x m] + b [m] broadcast over rows.
inline Var add_row(Var a, Var b) {
    Graph& g = detail::same_graph(a, b, "add_row");
    detail::require_rank2(a.value(), "add_row");
    const std::size_t n = a.value().rows(), m = a.value().cols();
    if (b.value().size() != m) throw ShapeError("add_row: bias length mismatch");
    std::vector<double> v(n * m);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) v[r * m + c] = a.value()(r, c) + b.value()[c];
    const std::size_t pa = a.id(), pb = b.id();
    return g.make(detail::checked(Shape{n, m}, std::move(v), "add_row"), {pa, pb}, [pa, pb, n, m](Graph& gr, std::size_t self) {
        const Tensor& gy = gr.grad(self);
        gr.accumulate(pa, gy.values());
        std::vector<double> gb(m, 0.0);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < m; ++c) gb[c] += gy(r, c);
        gr.accumulate(pb, gb);
    });
}

// ---------------------------------------------------------------------------
// Row-wise softmax family. A rank-1 input is treated as one row.

inline Var softmax(Var a) {
    const Tensor& x = a.value();
    if (x.rank() != 1 && x.rank() != 2) throw ShapeError("softmax: expected rank 1 or 2");
    const std::size_t n = x.rows(), k = x.cols();
    if (k == 0) throw ShapeError("softmax: zero classes");
    std::vector<double> y(n * k);
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = x.data() + r * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) z += (y[r * k + c] = std::exp(row[c] - mx));
        for (std::size_t c = 0; c < k; ++c) y[r * k + c] /= z;
    }
    const std::size_t pa = a.id();
    return a.graph().make(detail::checked(x.shape(), std::move(y), "softmax"), {pa}, [pa, n, k](Graph& g, std::size_t self) {
        const Tensor& yv = g.value(self);
        const Tensor& gy = g.grad(self);
        std::vector<double> gx(n * k);
        for (std::size_t r = 0; r < n; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < k; ++c) dot += gy[r * k + c] * yv[r * k + c];
            for (std::size_t c = 0; c < k; ++c) gx[r * k + c] = yv[r * k + c] * (gy[r * k + c] - dot);
        }
        g.accumulate(pa, gx);
    });
}

inline Var log_softmax(Var a) {
    const Tensor& x = a.value();
    if (x.rank() != 1 && x.rank() != 2) throw ShapeError("log_softmax: expected rank 1 or 2");
    const std::size_t n = x.rows(), k = x.cols();
    if (k == 0) throw ShapeError("log_softmax: zero classes");
    std::vector<double> y(n * k);
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = x.data() + r * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t c = 0; c < k; ++c) y[r * k + c] = row[c] - lse;
    }
    const std::size_t pa = a.id();
    return a.graph().make(detail::checked(x.shape(), std::move(y), "log_softmax"), {pa}, [pa, n, k](Graph& g, std::size_t self) {
        const Tensor& yv = g.value(self);
        const Tensor& gy = g.grad(self);
        std::vector<double> gx(n * k);
        for (std::size_t r = 0; r < n; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < k; ++c) s += gy[r * k + c];
            for (std::size_t c = 0; c < k; ++c) gx[r * k + c] = gy[r * k + c] - std::exp(yv[r * k + c]) * s;
        }
        g.accumulate(pa, gx);
    });
}

} // namespace densfix::ad
