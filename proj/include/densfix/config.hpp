#pragma once

// Plain-text run configuration:
//
//   # comment
//   [section]
//   key = value
//
// Every key has a default in the schema below; keys not in the schema are
// rejected. Values are kept as strings and converted on access.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "densfix/errors.hpp"

namespace densfix {

struct ConfigKey {
    std::string_view section;
    std::string_view key;
    std::string_view default_value;
    std::string_view help;
};

// clang-format off
inline constexpr ConfigKey kConfigSchema[] = {
    {"run", "seed", "0", "master seed"},
    {"run", "out", "out", "output directory"},

    {"data", "classes", "4", "number of classes K"},
    {"data", "n_train", "400", "training samples"},
    {"data", "n_test", "2000", "test samples"},
    {"data", "dim", "2", "input dimension"},
    {"data", "separation", "2.5", "distance between neighbouring class centers"},
    {"data", "noise_std", "1", "per-coordinate noise standard deviation"},
    {"data", "class_weights", "balanced", "training class proportions: balanced or w0,w1,..."},
    {"data", "test_class_weights", "balanced", "test class proportions: balanced, train or w0,w1,..."},
    {"data", "train_csv", "", "training CSV; empty uses the synthetic mixture"},
    {"data", "test_csv", "", "test CSV, required with train_csv"},
    {"data", "label_column", "label", "label column name in CSV files"},

    {"model", "hidden", "32", "hidden layer widths, comma separated; none for a linear model"},
    {"model", "activation", "relu", "hidden activation: relu, sigmoid or identity"},

    {"train", "epochs", "50", "training epochs"},
    {"train", "batch_size", "32", "minibatch size"},
    {"train", "learning_rate", "0.05", "step size"},
    {"train", "optimizer", "momentum", "sgd or momentum"},
    {"train", "momentum", "0.9", "momentum coefficient"},
    {"train", "eval_every", "1", "evaluate every n epochs"},

    {"density_fixing", "gamma", "1", "regularization weight"},
    {"density_fixing", "mode", "marginal", "marginal or per_sample"},
    {"density_fixing", "prior", "uniform", "uniform, estimate, bernoulli:<xi> or p0,p1,..."},

    {"semisup", "labeled_fraction", "0.2", "share of training samples that keep their labels"},
    {"semisup", "gammas", "0,0.25,0.5,1", "gamma values"},
    {"semisup", "seeds", "10", "number of seeds, run.seed + 0 .. n-1"},
    {"semisup", "reg_pool", "unlabeled", "predictions in the KL term: unlabeled or all"},

    {"kd", "alpha", "0.5", "weight of the label cross-entropy"},
    {"kd", "temperature", "1", "teacher temperature"},
    {"kd", "teacher_hidden", "64,64", "teacher hidden widths"},
    {"kd", "teacher_epochs", "50", "teacher training epochs"},

    {"gan", "modes", "8", "ring modes"},
    {"gan", "n", "2000", "ring samples"},
    {"gan", "radius", "2", "ring radius"},
    {"gan", "sigma", "0.05", "per-mode standard deviation"},
    {"gan", "latent_dim", "8", "generator input size"},
    {"gan", "hidden", "512", "hidden width of both networks"},
    {"gan", "epochs", "20", "training epochs"},
    {"gan", "batch_size", "64", "minibatch size"},
    {"gan", "learning_rate", "0.01", "step size"},
    {"gan", "optimizer", "momentum", "sgd or momentum"},
    {"gan", "momentum", "0.9", "momentum coefficient"},
    {"gan", "gammas", "0,1", "gamma values"},
    {"gan", "seeds", "1", "number of seeds, run.seed + 0 .. n-1"},
    {"gan", "prior_xi", "0.5", "discriminator prior Ber(xi)"},
    {"gan", "snapshot_every", "5", "epochs between generator snapshots"},
    {"gan", "snapshot_points", "512", "points per snapshot"},
    {"gan", "coverage_threshold", "0.01", "share of snapshot points a mode needs to count as covered"},

    {"asymptotics", "family", "bernoulli:0.3", "bernoulli:<xi0> or categorical-uniform:<K>"},
    {"asymptotics", "n_grid", "100,200,500,1000,2000", "sample sizes"},
    {"asymptotics", "replicas", "1000", "Monte Carlo replicas per sample size"},
    {"asymptotics", "regularized", "both", "both, regularized or unregularized"},
    {"asymptotics", "prior_source", "estimated", "estimated or truth"},
    {"asymptotics", "penalty", "total", "total or per_sample"},
    {"asymptotics", "threads", "1", "worker threads"},

    {"curves", "k_min", "2", "smallest K"},
    {"curves", "k_max", "20", "largest K"},
    {"curves", "xi_min", "0.01", "smallest xi"},
    {"curves", "xi_max", "0.99", "largest xi"},
    {"curves", "xi_points", "99", "xi grid size"},

    {"sweep", "gammas", "0,0.5,1,2", "gamma values"},
    {"sweep", "seeds", "5", "number of seeds, run.seed + 0 .. n-1"},
};
// clang-format on

inline const ConfigKey* find_config_key(std::string_view section, std::string_view key) {
    for (const auto& k : kConfigSchema) {
        if (k.section == section && k.key == key) return &k;
    }
    return nullptr;
}

namespace detail {

inline std::string_view trim_ws(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_list(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = s.find(',', start);
        out.push_back(trim_ws(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

} // namespace detail

class Config {
public:
    Config() {
        for (const auto& k : kConfigSchema) values_[name(k.section, k.key)] = std::string(k.default_value);
    }

    static Config from_string(std::string_view text, std::string_view source = "config") {
        Config c;
        std::string section;
        std::size_t line_no = 0, start = 0;
        std::map<std::string, bool> seen;
        while (start <= text.size()) {
            const std::size_t nl = text.find('\n', start);
            std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
            start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
            ++line_no;
            const std::string where = std::string(source) + ":" + std::to_string(line_no);
            line = detail::trim_ws(line);
            if (line.empty() || line.front() == '#' || line.front() == ';') continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError(where + ": malformed section header");
                section = std::string(detail::trim_ws(line.substr(1, line.size() - 2)));
                bool known = false;
                for (const auto& k : kConfigSchema) known = known || k.section == section;
                if (!known) throw ConfigError(where + ": unknown section [" + section + "]");
                continue;
            }
            const std::size_t eq = line.find('=');
            if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
            if (section.empty()) throw ConfigError(where + ": key outside any section");
            const std::string key(detail::trim_ws(line.substr(0, eq)));
            const std::string full = name(section, key);
            if (!find_config_key(section, key)) throw ConfigError(where + ": unknown key '" + full + "'");
            if (seen[full]) throw ConfigError(where + ": duplicate key '" + full + "'");
            seen[full] = true;
            c.values_[full] = std::string(detail::trim_ws(line.substr(eq + 1)));
        }
        return c;
    }

    static Config from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot read config file '" + path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        return from_string(ss.str(), path);
    }

    // "section.key" = value.
    void set(std::string_view dotted, std::string value) {
        const std::size_t dot = dotted.find('.');
        if (dot == std::string_view::npos || !find_config_key(dotted.substr(0, dot), dotted.substr(dot + 1))) {
            throw ConfigError("unknown key '" + std::string(dotted) + "'");
        }
        values_[std::string(dotted)] = std::move(value);
    }

    const std::string& get(std::string_view section, std::string_view key) const {
        const auto it = values_.find(name(section, key));
        if (it == values_.end()) throw ConfigError("unknown key '" + name(section, key) + "'");
        return it->second;
    }

    std::string get_string(std::string_view section, std::string_view key) const { return get(section, key); }

    double get_double(std::string_view section, std::string_view key) const {
        return to_double(get(section, key), name(section, key));
    }

    std::uint64_t get_u64(std::string_view section, std::string_view key) const {
        return to_u64(get(section, key), name(section, key));
    }

    std::size_t get_size(std::string_view section, std::string_view key) const {
        return static_cast<std::size_t>(get_u64(section, key));
    }

    std::vector<double> get_double_list(std::string_view section, std::string_view key) const {
        std::vector<double> out;
        for (auto part : detail::split_list(get(section, key))) out.push_back(to_double(part, name(section, key)));
        return out;
    }

    std::vector<std::size_t> get_size_list(std::string_view section, std::string_view key) const {
        std::vector<std::size_t> out;
        for (auto part : detail::split_list(get(section, key))) out.push_back(static_cast<std::size_t>(to_u64(part, name(section, key))));
        return out;
    }

    // Resolved values of the given sections, in schema order.
    std::string dump(const std::vector<std::string_view>& sections) const {
        std::ostringstream os;
        for (auto s : sections) {
            os << '[' << s << "]\n";
            for (const auto& k : kConfigSchema) {
                if (k.section == s) os << k.key << " = " << get(k.section, k.key) << '\n';
            }
        }
        return os.str();
    }

private:
    static std::string name(std::string_view section, std::string_view key) {
        return std::string(section) + "." + std::string(key);
    }

    static double to_double(std::string_view s, const std::string& what) {
        s = detail::trim_ws(s);
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
            throw ConfigError(what + ": expected a number, got '" + std::string(s) + "'");
        }
        return v;
    }

    static std::uint64_t to_u64(std::string_view s, const std::string& what) {
        s = detail::trim_ws(s);
        std::uint64_t v = 0;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
            throw ConfigError(what + ": expected a non-negative integer, got '" + std::string(s) + "'");
        }
        return v;
    }

    std::map<std::string, std::string> values_;
};

} // namespace densfix
