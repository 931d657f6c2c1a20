#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hystar/dataset.hpp"
#include "hystar/encoder.hpp"
#include "hystar/errors.hpp"
#include "hystar/rng.hpp"
#include "hystar/training.hpp"

namespace hystar {

/// Everything one CLI invocation needs, loaded from a flat key=value file.
struct RunConfig {
    std::uint64_t seed = 0;
    DatasetConfig data;
    EncoderConfig encoder;
    TrainConfig train;
    std::vector<std::uint64_t> seeds{0, 1, 2}; // ablation and sweep seeds
    std::optional<std::size_t> encoder_image_size; // unset: follows data.image_size

    /// Dataset configuration with its seed drawn from the root seed.
    DatasetConfig dataset_config() const {
        DatasetConfig d = data;
        d.seed = stream_seed(seed, "data");
        return d;
    }

    EncoderConfig encoder_config() const {
        EncoderConfig e = encoder;
        e.image_size = encoder_image_size.value_or(data.image_size);
        return e;
    }

    TrainConfig train_config() const {
        TrainConfig t = train;
        t.seed = seed;
        return t;
    }

    ExperimentSpec experiment() const { return {encoder_config(), train_config(), seeds, data.holdout_styles}; }

    void validate() const {
        dataset_config().validate();
        encoder_config().validate();
        train.validate();
        if (encoder_config().image_size != data.image_size)
            throw ConfigError("encoder.image_size", "must equal data.image_size");
        if (seeds.empty()) throw ConfigError("experiment.seeds", "need at least one seed");
    }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

template <typename U>
U parse_number(const std::string& key, const std::string& v) {
    U out{};
    const char* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError(key, "cannot parse '" + v + "' as a number");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key, "expected true or false, got '" + v + "'");
}

inline std::string fmt(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

template <typename U>
std::string join(const std::vector<U>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        if constexpr (std::is_same_v<U, std::string>) out += xs[i];
        else out += std::to_string(xs[i]);
    }
    return out;
}

struct Key {
    std::string name;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline const std::vector<Key>& keys() {
    using C = RunConfig;
    auto size_key = [](std::string name, auto getter) {
        return Key{name, [getter](const C& c) { return std::to_string(*getter(c)); },
                   [getter, name](C& c, const std::string& v) { *getter(c) = parse_number<std::size_t>(name, v); }};
    };
    auto real_key = [](std::string name, auto getter) {
        return Key{name, [getter](const C& c) { return fmt(*getter(c)); },
                   [getter, name](C& c, const std::string& v) { *getter(c) = parse_number<double>(name, v); }};
    };
    static const std::vector<Key> table = {
        {"seed", [](const C& c) { return std::to_string(c.seed); },
         [](C& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); }},
        size_key("data.n_classes", [](auto& c) { return &c.data.n_classes; }),
        size_key("data.samples_per_class_per_style", [](auto& c) { return &c.data.samples_per_class_per_style; }),
        size_key("data.image_size", [](auto& c) { return &c.data.image_size; }),
        {"data.styles", [](const C& c) { return join(c.data.styles); },
         [](C& c, const std::string& v) { c.data.styles = split_list(v); }},
        {"data.holdout_styles", [](const C& c) { return join(c.data.holdout_styles); },
         [](C& c, const std::string& v) { c.data.holdout_styles = split_list(v); }},
        {"encoder.image_size",
         [](const C& c) { return std::to_string(c.encoder_image_size.value_or(c.data.image_size)); },
         [](C& c, const std::string& v) { c.encoder_image_size = parse_number<std::size_t>("encoder.image_size", v); }},
        size_key("encoder.patch_size", [](auto& c) { return &c.encoder.patch_size; }),
        size_key("encoder.d_model", [](auto& c) { return &c.encoder.d_model; }),
        size_key("encoder.n_heads", [](auto& c) { return &c.encoder.n_heads; }),
        size_key("encoder.n_layers", [](auto& c) { return &c.encoder.n_layers; }),
        size_key("encoder.mlp_ratio", [](auto& c) { return &c.encoder.mlp_ratio; }),
        {"encoder.injected_layers", [](const C& c) { return join(c.encoder.injected_layers); },
         [](C& c, const std::string& v) {
             c.encoder.injected_layers.clear();
             for (const auto& s : split_list(v))
                 c.encoder.injected_layers.push_back(parse_number<std::size_t>("encoder.injected_layers", s));
         }},
        size_key("encoder.embed_dim", [](auto& c) { return &c.encoder.embed_dim; }),
        size_key("encoder.d_style", [](auto& c) { return &c.encoder.d_style; }),
        size_key("encoder.style_channels", [](auto& c) { return &c.encoder.style_channels; }),
        {"encoder.style_bias", [](const C& c) { return std::string(c.encoder.style_bias ? "true" : "false"); },
         [](C& c, const std::string& v) { c.encoder.style_bias = parse_bool("encoder.style_bias", v); }},
        {"hypernet.layout", [](const C& c) { return c.encoder.hypernet_layout; },
         [](C& c, const std::string& v) { c.encoder.hypernet_layout = v; }},
        {"hypernet.activation", [](const C& c) { return to_string(c.encoder.hypernet_activation); },
         [](C& c, const std::string& v) { c.encoder.hypernet_activation = parse_activation(v); }},
        size_key("train.batch_size", [](auto& c) { return &c.train.batch_size; }),
        size_key("train.epochs", [](auto& c) { return &c.train.epochs; }),
        real_key("train.lr_static", [](auto& c) { return &c.train.lr_static; }),
        real_key("train.lr_hyper", [](auto& c) { return &c.train.lr_hyper; }),
        {"train.loss", [](const C& c) { return to_string(c.train.loss); },
         [](C& c, const std::string& v) { c.train.loss = parse_loss_kind(v); }},
        {"train.mode", [](const C& c) { return to_string(c.train.mode); },
         [](C& c, const std::string& v) { c.train.mode = parse_ablation_mode(v); }},
        size_key("train.eval_every", [](auto& c) { return &c.train.eval_every; }),
        {"train.single_style_batches",
         [](const C& c) { return std::string(c.train.single_style_batches ? "true" : "false"); },
         [](C& c, const std::string& v) {
             c.train.single_style_batches = parse_bool("train.single_style_batches", v);
         }},
        real_key("loss.tau", [](auto& c) { return &c.train.loss_config.tau; }),
        real_key("loss.gamma", [](auto& c) { return &c.train.loss_config.gamma; }),
        real_key("loss.lambda", [](auto& c) { return &c.train.loss_config.lambda; }),
        real_key("loss.epsilon", [](auto& c) { return &c.train.loss_config.epsilon; }),
        size_key("loss.sinkhorn_iters", [](auto& c) { return &c.train.loss_config.sinkhorn_iters; }),
        real_key("loss.triplet_margin", [](auto& c) { return &c.train.loss_config.triplet_margin; }),
        size_key("loss.hard_negatives", [](auto& c) { return &c.train.loss_config.hard_negatives; }),
        {"experiment.seeds", [](const C& c) { return join(c.seeds); },
         [](C& c, const std::string& v) {
             c.seeds.clear();
             for (const auto& s : split_list(v)) c.seeds.push_back(parse_number<std::uint64_t>("experiment.seeds", s));
         }},
    };
    return table;
}

} // namespace config_detail

/// Applies one key=value assignment. Unknown keys are rejected.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& k : config_detail::keys())
        if (k.name == key) {
            k.set(cfg, value);
            return;
        }
    throw ConfigError(key, "unknown key");
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
inline RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("", "line " + std::to_string(lineno) + ": expected key=value");
        set_config_value(cfg, config_detail::trim(line.substr(0, eq)), config_detail::trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("", "cannot read config '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

/// Every key with its effective value, one per line in a fixed order.
inline std::string resolved_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& k : config_detail::keys()) out += k.name + "=" + k.get(cfg) + "\n";
    return out;
}

} // namespace hystar
