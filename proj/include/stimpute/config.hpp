#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stimpute/data.hpp"
#include "stimpute/engine.hpp"
#include "stimpute/model.hpp"
#include "stimpute/synthetic.hpp"

namespace stimpute {

/// Everything one command run needs: dataset paths and windowing, model and
/// training settings, the noise schedule, and run-level knobs (seed, pattern,
/// sample count, output directory).
struct RunConfig {
    std::string profile = "synth";

    std::string series_path;
    std::string coords_path;
    DataConfig data;

    ModelConfig model;
    TrainConfig train;

    int steps = 50;
    double beta1 = 1e-4;
    double betaT = 0.2;

    SyntheticSpec synth;

    std::uint64_t seed = 1;
    std::string out_dir = "out";
    std::string pattern = "block";
    int samples = 100;
    std::string checkpoint_path;
    std::string plot_nodes;  // comma-separated ids, empty -> first four
    bool write_samples = false;

    void validate() const {
        model.validate();
        train.validate();
        synth.validate();
        if (steps < 2) throw std::invalid_argument("diffusion steps must be at least 2");
        if (!(beta1 > 0.0 && beta1 < betaT && betaT < 1.0))
            throw std::invalid_argument("noise bounds must satisfy 0 < beta1 < betaT < 1");
        if (samples < 1) throw std::invalid_argument("sample count must be positive");
        if (data.window_length <= 0) throw std::invalid_argument("window length must be positive");
        if (!(data.train_fraction > 0.0 && data.train_fraction <= 1.0))
            throw std::invalid_argument("train fraction must be in (0,1]");
    }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("bad config: expected boolean, got '" + v + "'");
}

inline double parse_real(const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("bad config: expected number, got '" + v + "'");
    }
    if (used != v.size()) throw std::invalid_argument("bad config: expected number, got '" + v + "'");
    return x;
}

inline int parse_int(const std::string& v) {
    const double x = parse_real(v);
    const int i = static_cast<int>(x);
    if (static_cast<double>(i) != x)
        throw std::invalid_argument("bad config: expected integer, got '" + v + "'");
    return i;
}

inline std::uint64_t parse_seed(const std::string& v) {
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw std::invalid_argument("bad config: expected seed integer, got '" + v + "'");
    }
}

}  // namespace config_detail

/// Named defaults: the three dataset-scale setups plus the desk-scale synth one.
inline RunConfig profile_defaults(const std::string& name) {
    RunConfig c;
    c.profile = name;
    if (name == "aqi36") {
        c.data.window_length = 36;
        c.train.epochs = 200;
        c.steps = 100;
        c.model.virtual_nodes = 16;
        c.train.strategy.kind = "hybrid";
        c.train.strategy.historical = true;
    } else if (name == "metr-la" || name == "pems-bay") {
        c.data.window_length = 24;
        c.train.epochs = 300;
        c.steps = 50;
        c.model.virtual_nodes = 64;
        c.train.strategy.kind = "hybrid";
    } else if (name == "synth") {
        c.data.window_length = 24;
        c.model.d = 16;
        c.model.heads = 4;
        c.model.layers = 2;
        c.model.virtual_nodes = 8;
        c.model.step_embed_width = 32;
        c.model.time_encode_width = 32;
        c.model.node_embed_width = 8;
        c.model.adaptive_width = 2;
        c.train.epochs = 30;
        c.train.batch_size = 8;
        c.train.base_lr = 3e-3;
        c.train.strategy.kind = "hybrid";
        c.train.strategy.block_prob_ceiling = 0.3;
        c.steps = 30;
    } else {
        throw std::invalid_argument("bad config: unknown profile '" + name + "'");
    }
    return c;
}

/// Applies one `section.key = value` assignment. Throws on unknown names.
inline void apply_config_entry(RunConfig& c, const std::string& section, const std::string& key,
                               const std::string& value) {
    using namespace config_detail;
    const std::string full = section + "." + key;
    if (full == "run.profile") return;  // consumed by the first pass
    if (full == "run.seed") c.seed = parse_seed(value);
    else if (full == "run.out") c.out_dir = value;
    else if (full == "run.pattern") c.pattern = value;
    else if (full == "run.samples") c.samples = parse_int(value);
    else if (full == "run.checkpoint") c.checkpoint_path = value;
    else if (full == "run.plot_nodes") c.plot_nodes = value;
    else if (full == "run.write_samples") c.write_samples = parse_bool(value);
    else if (full == "data.series") c.series_path = value;
    else if (full == "data.coords") c.coords_path = value;
    else if (full == "data.window_length") c.data.window_length = parse_int(value);
    else if (full == "data.train_stride") c.data.train_stride = parse_int(value);
    else if (full == "data.eval_stride") c.data.eval_stride = parse_int(value);
    else if (full == "data.train_fraction") c.data.train_fraction = parse_real(value);
    else if (full == "data.missing_token") c.data.missing_token = value;
    else if (full == "data.kernel_width") c.data.kernel_width = parse_real(value);
    else if (full == "data.threshold") c.data.threshold = parse_real(value);
    else if (full == "model.d") c.model.d = parse_int(value);
    else if (full == "model.heads") c.model.heads = parse_int(value);
    else if (full == "model.layers") c.model.layers = parse_int(value);
    else if (full == "model.virtual_nodes") c.model.virtual_nodes = parse_int(value);
    else if (full == "model.step_embed_width") c.model.step_embed_width = parse_int(value);
    else if (full == "model.time_encode_width") c.model.time_encode_width = parse_int(value);
    else if (full == "model.node_embed_width") c.model.node_embed_width = parse_int(value);
    else if (full == "model.mpnn_order") c.model.mpnn_order = parse_int(value);
    else if (full == "model.adaptive_width") c.model.adaptive_width = parse_int(value);
    else if (full == "model.zero_init_head") c.model.zero_init_head = parse_bool(value);
    else if (full == "train.epochs") c.train.epochs = parse_int(value);
    else if (full == "train.batch_size") c.train.batch_size = parse_int(value);
    else if (full == "train.base_lr") c.train.base_lr = parse_real(value);
    else if (full == "train.decayed_lr") c.train.decayed_lr = parse_real(value);
    else if (full == "train.final_lr") c.train.final_lr = parse_real(value);
    else if (full == "train.validation_fraction") c.train.validation_fraction = parse_real(value);
    else if (full == "train.strategy") c.train.strategy.kind = value;
    else if (full == "train.block_prob_ceiling") c.train.strategy.block_prob_ceiling = parse_real(value);
    else if (full == "train.extra_fraction") c.train.strategy.extra_fraction = parse_real(value);
    else if (full == "train.hybrid_point_prob") c.train.strategy.hybrid_point_prob = parse_real(value);
    else if (full == "train.historical") c.train.strategy.historical = parse_bool(value);
    else if (full == "diffusion.steps") c.steps = parse_int(value);
    else if (full == "diffusion.beta1") c.beta1 = parse_real(value);
    else if (full == "diffusion.betaT") c.betaT = parse_real(value);
    else if (full == "synth.nodes") c.synth.node_count = parse_int(value);
    else if (full == "synth.window_length") c.synth.window_length = parse_int(value);
    else if (full == "synth.windows") c.synth.window_count = parse_int(value);
    else if (full == "synth.factors") c.synth.factors = parse_int(value);
    else if (full == "synth.noise") c.synth.noise = parse_real(value);
    else if (full == "synth.coord_seed") c.synth.coord_seed = parse_seed(value);
    else if (full == "synth.seed") c.synth.seed = parse_seed(value);
    else throw std::invalid_argument("bad config: unknown key '" + full + "'");
}

/// Flat sectioned text: `[section]` headers, `key = value` lines, `#` comments.
/// A `profile` key under `[run]` selects the defaults everything else overrides.
inline RunConfig parse_config(std::istream& in) {
    using namespace config_detail;
    std::vector<std::pair<std::string, std::string>> entries;  // section.key split kept
    std::string line, section, profile = "synth";
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw std::invalid_argument("bad config: malformed section '" + line + "'");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("bad config: expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty()) throw std::invalid_argument("bad config: key '" + key + "' outside any section");
        if (section == "run" && key == "profile") profile = value;
        entries.emplace_back(section, key + "=" + value);
    }
    RunConfig c = profile_defaults(profile);
    for (const auto& [sec, kv] : entries) {
        const auto eq = kv.find('=');
        apply_config_entry(c, sec, kv.substr(0, eq), kv.substr(eq + 1));
    }
    c.validate();
    return c;
}

inline RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    return parse_config(in);
}

/// Echoes the effective configuration; parsing the echo reproduces the run.
inline void write_config(const RunConfig& c, std::ostream& out) {
    char buf[64];
    auto real = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    out << "[run]\n";
    out << "profile = " << c.profile << '\n';
    out << "seed = " << c.seed << '\n';
    out << "out = " << c.out_dir << '\n';
    out << "pattern = " << c.pattern << '\n';
    out << "samples = " << c.samples << '\n';
    if (!c.checkpoint_path.empty()) out << "checkpoint = " << c.checkpoint_path << '\n';
    if (!c.plot_nodes.empty()) out << "plot_nodes = " << c.plot_nodes << '\n';
    out << "write_samples = " << (c.write_samples ? "true" : "false") << '\n';
    out << "\n[data]\n";
    if (!c.series_path.empty()) out << "series = " << c.series_path << '\n';
    if (!c.coords_path.empty()) out << "coords = " << c.coords_path << '\n';
    out << "window_length = " << c.data.window_length << '\n';
    out << "train_stride = " << c.data.train_stride << '\n';
    out << "eval_stride = " << c.data.eval_stride << '\n';
    out << "train_fraction = " << real(c.data.train_fraction) << '\n';
    if (!c.data.missing_token.empty()) out << "missing_token = " << c.data.missing_token << '\n';
    out << "kernel_width = " << real(c.data.kernel_width) << '\n';
    out << "threshold = " << real(c.data.threshold) << '\n';
    out << "\n[model]\n";
    out << "d = " << c.model.d << '\n';
    out << "heads = " << c.model.heads << '\n';
    out << "layers = " << c.model.layers << '\n';
    out << "virtual_nodes = " << c.model.virtual_nodes << '\n';
    out << "step_embed_width = " << c.model.step_embed_width << '\n';
    out << "time_encode_width = " << c.model.time_encode_width << '\n';
    out << "node_embed_width = " << c.model.node_embed_width << '\n';
    out << "mpnn_order = " << c.model.mpnn_order << '\n';
    out << "adaptive_width = " << c.model.adaptive_width << '\n';
    out << "zero_init_head = " << (c.model.zero_init_head ? "true" : "false") << '\n';
    out << "\n[train]\n";
    out << "epochs = " << c.train.epochs << '\n';
    out << "batch_size = " << c.train.batch_size << '\n';
    out << "base_lr = " << real(c.train.base_lr) << '\n';
    out << "decayed_lr = " << real(c.train.decayed_lr) << '\n';
    out << "final_lr = " << real(c.train.final_lr) << '\n';
    out << "validation_fraction = " << real(c.train.validation_fraction) << '\n';
    out << "strategy = " << c.train.strategy.kind << '\n';
    out << "block_prob_ceiling = " << real(c.train.strategy.block_prob_ceiling) << '\n';
    out << "extra_fraction = " << real(c.train.strategy.extra_fraction) << '\n';
    out << "hybrid_point_prob = " << real(c.train.strategy.hybrid_point_prob) << '\n';
    out << "historical = " << (c.train.strategy.historical ? "true" : "false") << '\n';
    out << "\n[diffusion]\n";
    out << "steps = " << c.steps << '\n';
    out << "beta1 = " << real(c.beta1) << '\n';
    out << "betaT = " << real(c.betaT) << '\n';
    out << "\n[synth]\n";
    out << "nodes = " << c.synth.node_count << '\n';
    out << "window_length = " << c.synth.window_length << '\n';
    out << "windows = " << c.synth.window_count << '\n';
    out << "factors = " << c.synth.factors << '\n';
    out << "noise = " << real(c.synth.noise) << '\n';
    out << "coord_seed = " << c.synth.coord_seed << '\n';
    out << "seed = " << c.synth.seed << '\n';
}

}  // namespace stimpute
