#pragma once

// Flat key=value run configuration with model presets. Rendering is
// deterministic and parse(render(cfg)) reproduces cfg exactly.

#include "t4t/decision.hpp"
#include "t4t/model.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace t4t {

struct RunConfig {
    std::string model = "tiny";
    EncoderConfig encoder;
    TpmConfig tpm;
    int general_classes = 13;
    int trans_classes = 12;

    double lr = 1e-4;
    double poly_power = 0.9;
    int epochs = 100;
    int batch_size = 4;
    double weight_decay = 1e-4;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;

    DecisionConfig decision;

    std::string dataset_dir;
    std::string checkpoint_path;
    std::string out_dir = ".";

    bool operator==(const RunConfig& other) const;
};

inline void apply_model_preset(RunConfig& cfg, const std::string& tag) {
    cfg.model = tag;
    if (tag == "tiny" || tag == "small" || tag == "medium") {
        cfg.encoder = EncoderConfig{};
        if (tag == "small") cfg.encoder.stage_depths = {3, 4, 6, 3};
        if (tag == "medium") cfg.encoder.stage_depths = {3, 4, 18, 3};
        cfg.tpm = TpmConfig{};
        cfg.general_classes = 13;
        cfg.trans_classes = 12;
        cfg.lr = 1e-4;
        cfg.epochs = 100;
    } else if (tag == "toy") {
        cfg.encoder.stage_channels = {8, 16, 24, 32};
        cfg.encoder.stage_depths = {2, 2, 2, 2};
        cfg.encoder.heads = {1, 2, 3, 4};
        cfg.encoder.sr_ratios = {1, 1, 1, 1};
        cfg.encoder.ffn_expansion = {2, 2, 2, 2};
        cfg.encoder.base_h = cfg.encoder.base_w = 32;
        cfg.tpm.embed_dim = 8;
        cfg.tpm.heads = 1;
        cfg.tpm.kv_pool = 0; // full attention is affordable at toy scale
        cfg.general_classes = 4;
        cfg.trans_classes = 4;
        cfg.lr = 2e-3;
        cfg.epochs = 50;
    } else {
        throw ConfigError("unknown model tag '" + tag + "' (tiny|small|medium|toy)");
    }
}

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fmt_array(const std::array<int, 4>& a) {
    std::ostringstream os;
    os << a[0] << "," << a[1] << "," << a[2] << "," << a[3];
    return os.str();
}

inline std::array<int, 4> parse_array4(const std::string& v, const std::string& key) {
    std::array<int, 4> out{};
    std::istringstream is(v);
    std::string item;
    int i = 0;
    while (std::getline(is, item, ',')) {
        if (i >= 4) throw ConfigError(key + ": expected 4 comma-separated ints");
        out[static_cast<std::size_t>(i++)] = std::stoi(item);
    }
    if (i != 4) throw ConfigError(key + ": expected 4 comma-separated ints");
    return out;
}

} // namespace detail

// key order is fixed so renders diff cleanly
inline std::vector<std::pair<std::string, std::string>> config_items(const RunConfig& c) {
    using detail::fmt_array;
    using detail::fmt_double;
    return {
        {"model", c.model},
        {"encoder.channels", fmt_array(c.encoder.stage_channels)},
        {"encoder.depths", fmt_array(c.encoder.stage_depths)},
        {"encoder.heads", fmt_array(c.encoder.heads)},
        {"encoder.sr_ratios", fmt_array(c.encoder.sr_ratios)},
        {"encoder.ffn_expansion", fmt_array(c.encoder.ffn_expansion)},
        {"encoder.base_h", std::to_string(c.encoder.base_h)},
        {"encoder.base_w", std::to_string(c.encoder.base_w)},
        {"tpm.embed_dim", std::to_string(c.tpm.embed_dim)},
        {"tpm.heads", std::to_string(c.tpm.heads)},
        {"tpm.fusion", c.tpm.fusion == FusionMode::concat ? "concat" : "sum"},
        {"tpm.kv_pool", std::to_string(c.tpm.kv_pool)},
        {"classes.general", std::to_string(c.general_classes)},
        {"classes.trans", std::to_string(c.trans_classes)},
        {"train.lr", fmt_double(c.lr)},
        {"train.poly_power", fmt_double(c.poly_power)},
        {"train.epochs", std::to_string(c.epochs)},
        {"train.batch_size", std::to_string(c.batch_size)},
        {"train.weight_decay", fmt_double(c.weight_decay)},
        {"train.adam_eps", fmt_double(c.adam_eps)},
        {"train.seed", std::to_string(c.seed)},
        {"theta_obstacle_m", fmt_double(c.decision.theta_obstacle_m)},
        {"theta_trans", fmt_double(c.decision.theta_trans)},
        {"theta_walkable", fmt_double(c.decision.theta_walkable)},
        {"cycle_frames", std::to_string(c.decision.cycle_frames)},
        {"min_valid_depth_fraction", fmt_double(c.decision.min_valid_depth_fraction)},
        {"min_object_area_fraction", fmt_double(c.decision.min_object_area_fraction)},
        {"paths.dataset_dir", c.dataset_dir},
        {"paths.checkpoint", c.checkpoint_path},
        {"paths.out_dir", c.out_dir},
    };
}

inline std::string render_config(const RunConfig& c) {
    std::ostringstream os;
    for (const auto& [k, v] : config_items(c)) os << k << "=" << v << "\n";
    return os.str();
}

// only the keys that fix the network architecture; stored in checkpoints
inline std::string render_arch_config(const RunConfig& c) {
    std::ostringstream os;
    for (const auto& [k, v] : config_items(c)) {
        if (k.rfind("encoder.", 0) == 0 || k.rfind("tpm.", 0) == 0 ||
            k.rfind("classes.", 0) == 0)
            os << k << "=" << v << "\n";
    }
    return os.str();
}

inline void set_config_key(RunConfig& c, const std::string& key, const std::string& value) {
    using detail::parse_array4;
    if (key == "model") apply_model_preset(c, value);
    else if (key == "encoder.channels") c.encoder.stage_channels = parse_array4(value, key);
    else if (key == "encoder.depths") c.encoder.stage_depths = parse_array4(value, key);
    else if (key == "encoder.heads") c.encoder.heads = parse_array4(value, key);
    else if (key == "encoder.sr_ratios") c.encoder.sr_ratios = parse_array4(value, key);
    else if (key == "encoder.ffn_expansion") c.encoder.ffn_expansion = parse_array4(value, key);
    else if (key == "encoder.base_h") c.encoder.base_h = std::stoi(value);
    else if (key == "encoder.base_w") c.encoder.base_w = std::stoi(value);
    else if (key == "tpm.embed_dim") c.tpm.embed_dim = std::stoi(value);
    else if (key == "tpm.heads") c.tpm.heads = std::stoi(value);
    else if (key == "tpm.fusion") {
        if (value == "sum") c.tpm.fusion = FusionMode::sum;
        else if (value == "concat") c.tpm.fusion = FusionMode::concat;
        else throw ConfigError("tpm.fusion: expected sum|concat, got '" + value + "'");
    } else if (key == "tpm.kv_pool") c.tpm.kv_pool = std::stoi(value);
    else if (key == "classes.general") c.general_classes = std::stoi(value);
    else if (key == "classes.trans") c.trans_classes = std::stoi(value);
    else if (key == "train.lr") c.lr = std::stod(value);
    else if (key == "train.poly_power") c.poly_power = std::stod(value);
    else if (key == "train.epochs") c.epochs = std::stoi(value);
    else if (key == "train.batch_size") c.batch_size = std::stoi(value);
    else if (key == "train.weight_decay") c.weight_decay = std::stod(value);
    else if (key == "train.adam_eps") c.adam_eps = std::stod(value);
    else if (key == "train.seed") c.seed = std::stoull(value);
    else if (key == "theta_obstacle_m") c.decision.theta_obstacle_m = std::stod(value);
    else if (key == "theta_trans") c.decision.theta_trans = std::stod(value);
    else if (key == "theta_walkable") c.decision.theta_walkable = std::stod(value);
    else if (key == "cycle_frames") c.decision.cycle_frames = std::stoi(value);
    else if (key == "min_valid_depth_fraction") c.decision.min_valid_depth_fraction = std::stod(value);
    else if (key == "min_object_area_fraction") c.decision.min_object_area_fraction = std::stod(value);
    else if (key == "paths.dataset_dir") c.dataset_dir = value;
    else if (key == "paths.checkpoint") c.checkpoint_path = value;
    else if (key == "paths.out_dir") c.out_dir = value;
    else throw ConfigError("unknown config key '" + key + "'");
}

inline RunConfig parse_config(const std::string& text) {
    RunConfig c;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        if (line[first] == '#') continue;
        const auto eq = line.find('=', first);
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        auto key = line.substr(first, eq - first);
        while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
        auto value = line.substr(eq + 1);
        while (!value.empty() && (value.back() == '\r' || value.back() == '\n')) value.pop_back();
        set_config_key(c, key, value);
    }
    return c;
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

inline bool RunConfig::operator==(const RunConfig& other) const {
    return render_config(*this) == render_config(other);
}

template <typename T>
DualSegModel<T> build_model(const RunConfig& cfg) {
    return DualSegModel<T>(cfg.encoder, cfg.tpm, cfg.general_classes, cfg.trans_classes,
                           cfg.seed);
}

} // namespace t4t
