#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "densfix/autodiff.hpp"
#include "densfix/errors.hpp"
#include "densfix/rng.hpp"
#include "densfix/tensor.hpp"

namespace densfix {

enum class Activation { Identity, Relu, Sigmoid };

inline std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Relu: return "relu";
        case Activation::Sigmoid: return "sigmoid";
    }
    return "identity";
}

inline Activation parse_activation(std::string_view s) {
    if (s == "identity") return Activation::Identity;
    if (s == "relu") return Activation::Relu;
    if (s == "sigmoid") return Activation::Sigmoid;
    throw InvalidArgument("unknown activation '" + std::string(s) + "'");
}

struct Layer {
    Tensor weight;  // [out x in]
    Tensor bias;    // [out]
    Activation activation = Activation::Identity;

    std::size_t in() const { return weight.dim(1); }
    std::size_t out() const { return weight.dim(0); }

    bool operator==(const Layer&) const = default;
};

/// Fully connected network: layer l maps in_l -> out_l and out_l == in_{l+1}.
struct ModelParams {
    std::vector<Layer> layers;

    std::size_t input_dim() const { return layers.front().in(); }
    std::size_t output_dim() const { return layers.back().out(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weight.size() + l.bias.size();
        return n;
    }

    void validate() const {
        if (layers.empty()) throw InvalidArgument("ModelParams: no layers");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const Layer& l = layers[i];
            if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.size() != l.out()) {
                throw ShapeError("ModelParams: layer " + std::to_string(i) + " has inconsistent weight/bias shapes");
            }
            if (i > 0 && layers[i - 1].out() != l.in()) {
                throw ShapeError("ModelParams: layer " + std::to_string(i) + " expects width " + std::to_string(l.in()) +
                                 " but previous layer produces " + std::to_string(layers[i - 1].out()));
            }
            ensure_finite(l.weight.values(), "ModelParams weight");
            ensure_finite(l.bias.values(), "ModelParams bias");
        }
    }

    bool operator==(const ModelParams&) const = default;
};

/// Hidden layers use `hidden_activation`, the last layer is linear. Weights are
/// N(0, s^2) with s = sqrt(2 / fan_in) after ReLU-family layers and
/// sqrt(1 / fan_in) otherwise; biases start at zero.
inline ModelParams mlp_init(const std::vector<std::size_t>& sizes, Activation hidden_activation, std::uint64_t seed) {
    if (sizes.size() < 2) throw InvalidArgument("mlp_init: need at least input and output sizes");
    for (std::size_t s : sizes) {
        if (s == 0) throw InvalidArgument("mlp_init: zero-width layer");
    }
    Rng rng(seed);
    ModelParams p;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const std::size_t in = sizes[l], out = sizes[l + 1];
        const bool last = l + 2 == sizes.size();
        const Activation act = last ? Activation::Identity : hidden_activation;
        const double gain = (act == Activation::Relu) ? 2.0 : 1.0;
        const double scale = std::sqrt(gain / static_cast<double>(in));
        std::vector<double> w(out * in);
        for (double& x : w) x = scale * rng.normal();
        p.layers.push_back({Tensor(Shape{out, in}, std::move(w)), Tensor(Shape{out}, 0.0), act});
    }
    return p;
}

inline ad::Var apply_activation(ad::Var x, Activation a) {
    switch (a) {
        case Activation::Identity: return x;
        case Activation::Relu: return ad::relu(x);
        case Activation::Sigmoid: return ad::sigmoid(x);
    }
    return x;
}

/// Leaves of one model registered on a graph, in layer order.
struct BoundParams {
    std::vector<ad::Var> weights;
    std::vector<ad::Var> biases;
};

// `trainable` selects parameter (gradient-tracked) versus constant leaves.
inline BoundParams bind(ad::Graph& g, const ModelParams& p, bool trainable = true) {
    BoundParams b;
    for (const auto& l : p.layers) {
        b.weights.push_back(trainable ? g.parameter(l.weight) : g.constant(l.weight));
        b.biases.push_back(trainable ? g.parameter(l.bias) : g.constant(l.bias));
    }
    return b;
}

inline ad::Var mlp_forward(const ModelParams& p, const BoundParams& bound, ad::Var x) {
    if (x.value().rank() != 2 || x.value().cols() != p.input_dim()) {
        throw ShapeError("mlp_forward: input " + shape_str(x.shape()) + " does not match model input width " +
                         std::to_string(p.input_dim()));
    }
    ad::Var h = x;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        h = apply_activation(ad::linear(h, bound.weights[l], bound.biases[l]), p.layers[l].activation);
    }
    return h;
}

// Forward pass with the parameters as fresh trainable leaves of `g`.
inline ad::Var mlp_forward(ad::Graph& g, const ModelParams& p, ad::Var x) { return mlp_forward(p, bind(g, p), x); }

// Plain evaluation without keeping a graph around.
inline Tensor mlp_predict(const ModelParams& p, const Tensor& x) {
    ad::Graph g;
    return mlp_forward(p, bind(g, p, false), g.constant(x)).value();
}

inline Tensor softmax_rows(const Tensor& logits) {
    ad::Graph g;
    return ad::softmax(g.constant(logits)).value();
}

// ---------------------------------------------------------------------------
// GAN pair

struct GanPair {
    ModelParams generator;      // latent_dim -> 2
    ModelParams discriminator;  // 2 -> 1, sigmoid output

    std::size_t latent_dim() const { return generator.input_dim(); }
};

inline constexpr std::size_t kGanDataDim = 2;

/// Generator and discriminator with three hidden ReLU layers of `hidden` units.
inline GanPair gan_init(std::size_t latent_dim = 8, std::uint64_t seed = 0, std::size_t hidden = 512) {
    if (latent_dim == 0) throw InvalidArgument("gan_init: latent_dim must be >= 1");
    if (hidden == 0) throw InvalidArgument("gan_init: hidden width must be >= 1");
    GanPair pair;
    pair.generator = mlp_init({latent_dim, hidden, hidden, hidden, kGanDataDim}, Activation::Relu, derive_seed(seed, 0));
    pair.discriminator = mlp_init({kGanDataDim, hidden, hidden, hidden, 1}, Activation::Relu, derive_seed(seed, 1));
    pair.discriminator.layers.back().activation = Activation::Sigmoid;
    return pair;
}

// ---------------------------------------------------------------------------
// Flat parameter dump.
//
// Line 1 (text): "densfix-params <L> <out>x<in>:<activation> ..." and '\n'.
// Then, per layer, the weight values (row-major) followed by the bias
// values, each as a 64-bit IEEE-754 little-endian float.

namespace detail {

inline void write_f64_le(std::ostream& os, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFFu);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

inline double read_f64_le(std::istream& is) {
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), 8)) throw InvalidArgument("parameter dump: truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

} // namespace detail

inline void save_params(std::ostream& os, const ModelParams& p) {
    p.validate();
    os << "densfix-params " << p.layers.size();
    for (const auto& l : p.layers) os << ' ' << l.out() << 'x' << l.in() << ':' << to_string(l.activation);
    os << '\n';
    for (const auto& l : p.layers) {
        for (double v : l.weight.values()) detail::write_f64_le(os, v);
        for (double v : l.bias.values()) detail::write_f64_le(os, v);
    }
    if (!os) throw Error("save_params: write failed");
}

inline ModelParams load_params(std::istream& is) {
    std::string header;
    if (!std::getline(is, header)) throw InvalidArgument("parameter dump: missing manifest line");
    std::istringstream hs(header);
    std::string magic;
    std::size_t count = 0;
    if (!(hs >> magic >> count) || magic != "densfix-params") throw InvalidArgument("parameter dump: bad manifest");
    struct Entry {
        std::size_t out, in;
        Activation act;
    };
    std::vector<Entry> entries;
    for (std::size_t i = 0; i < count; ++i) {
        std::string tok;
        if (!(hs >> tok)) throw InvalidArgument("parameter dump: manifest lists fewer layers than declared");
        const auto x = tok.find('x'), colon = tok.find(':');
        if (x == std::string::npos || colon == std::string::npos || colon < x) throw InvalidArgument("parameter dump: bad layer token '" + tok + "'");
        entries.push_back({std::stoul(tok.substr(0, x)), std::stoul(tok.substr(x + 1, colon - x - 1)),
                           parse_activation(tok.substr(colon + 1))});
    }
    ModelParams p;
    for (const auto& e : entries) {
        std::vector<double> w(e.out * e.in), b(e.out);
        for (double& v : w) v = detail::read_f64_le(is);
        for (double& v : b) v = detail::read_f64_le(is);
        p.layers.push_back({Tensor(Shape{e.out, e.in}, std::move(w)), Tensor(Shape{e.out}, std::move(b)), e.act});
    }
    p.validate();
    return p;
}

inline void save_params(const std::string& path, const ModelParams& p) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("save_params: cannot open " + path);
    save_params(os, p);
}

inline ModelParams load_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("load_params: cannot open " + path);
    return load_params(is);
}

} // namespace densfix
