#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "stimpute/baselines.hpp"
#include "stimpute/config.hpp"
#include "stimpute/engine.hpp"
#include "stimpute/svg.hpp"
#include "stimpute/synthetic.hpp"

namespace fs = std::filesystem;
using namespace stimpute;

namespace {

struct Flags {
    std::string config, out, pattern;
    std::uint64_t seed = 0;
    int samples = 0;
    bool has_seed = false, has_pattern = false, has_samples = false, has_out = false;
};

void add_common_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "run configuration file");
    cmd->add_option("--seed", f.seed, "master RNG seed")->each([&f](const std::string&) { f.has_seed = true; });
    cmd->add_option("--pattern", f.pattern, "evaluation mask pattern: point, block, failure:<ids>")
        ->each([&f](const std::string&) { f.has_pattern = true; });
    cmd->add_option("--samples", f.samples, "imputation samples per window (default 100)")
        ->each([&f](const std::string&) { f.has_samples = true; });
    cmd->add_option("--out", f.out, "output directory")->each([&f](const std::string&) { f.has_out = true; });
}

RunConfig effective_config(const Flags& f) {
    RunConfig cfg = f.config.empty() ? profile_defaults("synth") : parse_config_file(f.config);
    if (f.has_seed) {
        cfg.seed = f.seed;
        cfg.synth.seed = f.seed;
    }
    if (f.has_pattern) cfg.pattern = f.pattern;
    if (f.has_samples) cfg.samples = f.samples;
    if (f.has_out) cfg.out_dir = f.out;
    cfg.validate();
    return cfg;
}

void echo_config(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    std::ofstream out(fs::path(cfg.out_dir) / "config.txt");
    if (!out) throw std::runtime_error("cannot write " + (fs::path(cfg.out_dir) / "config.txt").string());
    write_config(cfg, out);
}

std::string series_path(const RunConfig& cfg) {
    return cfg.series_path.empty() ? (fs::path(cfg.out_dir) / "series.csv").string() : cfg.series_path;
}

std::string coords_path(const RunConfig& cfg) {
    return cfg.coords_path.empty() ? (fs::path(cfg.out_dir) / "coords.csv").string() : cfg.coords_path;
}

std::string checkpoint_path(const RunConfig& cfg) {
    return cfg.checkpoint_path.empty() ? (fs::path(cfg.out_dir) / "model.ckpt").string()
                                       : cfg.checkpoint_path;
}

/// Rows are timestamps, columns are nodes; empty cell = not applicable.
void write_matrix_csv(const std::string& path, const std::vector<const Window*>& windows,
                      const std::vector<Tensor>& grids, const std::vector<std::string>& ids,
                      const Tensor* gate_per_window = nullptr) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "timestamp";
    for (const auto& id : ids) out << ',' << id;
    out << '\n';
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const Window& win = *windows[w];
        for (int l = 0; l < win.steps(); ++l) {
            out << format_timestamp(win.timestamps[static_cast<std::size_t>(l)]);
            for (int i = 0; i < win.nodes(); ++i) {
                out << ',';
                const bool keep = gate_per_window == nullptr || gate_per_window[w](i, l) != 0.0;
                if (keep) {
                    char buf[40];
                    std::snprintf(buf, sizeof(buf), "%.17g", grids[w](i, l));
                    out << buf;
                }
            }
            out << '\n';
        }
    }
}

std::vector<int> parse_plot_nodes(const RunConfig& cfg, const std::vector<std::string>& ids) {
    std::vector<int> nodes;
    if (cfg.plot_nodes.empty()) {
        for (int i = 0; i < static_cast<int>(ids.size()) && i < 4; ++i) nodes.push_back(i);
        return nodes;
    }
    std::string tok;
    auto flush = [&] {
        if (tok.empty()) return;
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (ids[i] == tok) {
                nodes.push_back(static_cast<int>(i));
                tok.clear();
                return;
            }
        char* end = nullptr;
        const long v = std::strtol(tok.c_str(), &end, 10);
        if (end == tok.c_str() || *end != '\0' || v < 0 || v >= static_cast<long>(ids.size()))
            throw std::invalid_argument("bad config: unknown plot node '" + tok + "'");
        nodes.push_back(static_cast<int>(v));
        tok.clear();
    };
    for (char c : cfg.plot_nodes) {
        if (c == ',')
            flush();
        else
            tok += c;
    }
    flush();
    return nodes;
}

/// Loads the series and renormalizes every window with the supplied statistics
/// (the checkpoint's during imputation) instead of the file-derived ones.
Dataset load_with_stats(const RunConfig& cfg, const NormStats& stats) {
    Dataset ds = load_series(series_path(cfg), coords_path(cfg), cfg.data);
    if (stats.mean.size() != ds.stats.mean.size())
        throw std::runtime_error("node count differs from checkpoint");
    auto renorm = [&](std::vector<Window>& ws) {
        for (auto& w : ws) {
            Tensor raw = denormalize(w.values, ds.stats);
            for (std::size_t i = 0; i < raw.size(); ++i)
                if (w.observed[i] == 0.0) raw[i] = 0.0;
            w.values = normalize(raw, w.observed, stats);
        }
    };
    renorm(ds.train_windows);
    renorm(ds.eval_windows);
    ds.stats = stats;
    return ds;
}

std::vector<MaskPlan> build_eval_plans(const Dataset& ds, const RunConfig& cfg) {
    const EvalPattern pattern = parse_pattern(cfg.pattern, ds.node_ids);
    Rng master(cfg.seed);
    std::vector<MaskPlan> plans;
    for (std::size_t wi = 0; wi < ds.eval_windows.size(); ++wi) {
        Rng rng = master.substream("plan", static_cast<std::uint64_t>(wi));
        plans.push_back(simulate_eval_missing(ds.eval_windows[wi], pattern, rng,
                                              ds.period_minutes > 0 ? ds.period_minutes : 5));
    }
    return plans;
}

void write_metrics(const RunConfig& cfg, const ImputeOutput& out) {
    std::ofstream report(fs::path(cfg.out_dir) / "metrics.txt");
    if (!report) throw std::runtime_error("cannot write metrics report");
    char line[160];
    std::snprintf(line, sizeof(line), "%-14s %12s\n", "metric", "value");
    report << line << std::string(27, '-') << '\n';
    auto row = [&](const char* name, double v) {
        std::snprintf(line, sizeof(line), "%-14s %12.6f\n", name, v);
        report << line;
    };
    row("mae", out.metrics.mae);
    row("mse", out.metrics.mse);
    row("crps", out.metrics.crps);
    row("target_cells", out.metrics.cells);

    std::ofstream kv(fs::path(cfg.out_dir) / "metrics.kv");
    char buf[64];
    auto put = [&](const char* k, double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        kv << k << '=' << buf << '\n';
    };
    put("mae", out.metrics.mae);
    put("mse", out.metrics.mse);
    put("crps", out.metrics.crps);
    put("target_cells", out.metrics.cells);
}

int cmd_synth(const RunConfig& cfg) {
    echo_config(cfg);
    SyntheticData data = synthesize(cfg.synth);
    write_synthetic_csv(data, series_path(cfg), coords_path(cfg));
    std::cout << "synth: wrote " << cfg.synth.node_count << " nodes x "
              << cfg.synth.window_count * cfg.synth.window_length << " steps to " << series_path(cfg)
              << '\n';
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    echo_config(cfg);
    Dataset ds = load_series(series_path(cfg), coords_path(cfg), cfg.data);

    std::vector<Window> windows = ds.train_windows;
    NormStats stats = ds.stats;
    const EvalPattern pattern = parse_pattern(cfg.pattern, ds.node_ids);
    if (pattern.kind == "failure") {
        // outage spans training too: drop the nodes' evidence, then restandardize
        const int n = static_cast<int>(ds.node_ids.size());
        int total = 0;
        for (const auto& w : windows) total += w.steps();
        Tensor vals({n, total}), obs({n, total});
        int col = 0;
        for (auto& w : windows) {
            Tensor raw = denormalize(w.values, ds.stats);
            w = apply_failure_to_window(w, pattern.failure_nodes);
            for (int i = 0; i < n; ++i)
                for (int l = 0; l < w.steps(); ++l) {
                    vals(i, col + l) = w.observed(i, l) != 0.0 ? raw(i, l) : 0.0;
                    obs(i, col + l) = w.observed(i, l);
                }
            col += w.steps();
        }
        stats = compute_stats(vals, obs, 0, total);
        col = 0;
        for (auto& w : windows) {
            Tensor raw({n, w.steps()});
            for (int i = 0; i < n; ++i)
                for (int l = 0; l < w.steps(); ++l) raw(i, l) = vals(i, col + l);
            w.values = normalize(raw, w.observed, stats);
            col += w.steps();
        }
    }

    TrainConfig tcfg = cfg.train;
    tcfg.seed = cfg.seed;
    if (tcfg.strategy.historical) tcfg.strategy.pool = &windows;
    DiffusionSchedule sched = build_schedule(cfg.steps, cfg.beta1, cfg.betaT);
    TrainResult res = train(windows, ds.adjacency, cfg.model, tcfg, sched);

    std::ofstream trace(fs::path(cfg.out_dir) / "loss_trace.txt");
    if (!trace) throw std::runtime_error("cannot write loss trace");
    for (const auto& p : res.trace) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", p.epoch, p.loss, p.lr);
        trace << buf;
    }

    Checkpoint ck;
    ck.model = cfg.model;
    ck.T = cfg.steps;
    ck.beta1 = cfg.beta1;
    ck.betaT = cfg.betaT;
    ck.n_nodes = static_cast<int>(ds.node_ids.size());
    ck.stats = stats;
    ck.adjacency = ds.adjacency;
    ck.params = std::move(res.params);
    save_checkpoint(ck, checkpoint_path(cfg));

    std::cout << "train: " << res.trace.size() << " epochs, final loss "
              << (res.trace.empty() ? 0.0 : res.trace.back().loss) << ", checkpoint "
              << checkpoint_path(cfg) << '\n';
    return 0;
}

struct ImputeArtifacts {
    Dataset ds;
    ImputeOutput out;
};

ImputeArtifacts run_imputation(const RunConfig& cfg) {
    Checkpoint ck = load_checkpoint(checkpoint_path(cfg));
    Dataset ds = load_with_stats(cfg, ck.stats);
    std::vector<MaskPlan> plans = build_eval_plans(ds, cfg);
    DiffusionSchedule sched = build_schedule(ck.T, ck.beta1, ck.betaT);
    ImputeOutput out = impute_dataset(ds.eval_windows, plans, ck.adjacency, ck.params, ck.model,
                                      sched, ck.stats, cfg.samples, cfg.seed);
    return {std::move(ds), std::move(out)};
}

int cmd_impute(const RunConfig& cfg) {
    echo_config(cfg);
    ImputeArtifacts art = run_imputation(cfg);
    const auto& ws = art.out.windows;

    std::vector<const Window*> windows;
    std::vector<Tensor> median, q05, q95, truth, mask, cond;
    for (const auto& wi : ws) {
        windows.push_back(wi.window);
        median.push_back(wi.result.median);
        q05.push_back(wi.result.q05);
        q95.push_back(wi.result.q95);
        truth.push_back(denormalize(wi.window->values, art.ds.stats));
        mask.push_back(wi.plan.target);
        cond.push_back(wi.plan.cond);
    }
    const auto dir = fs::path(cfg.out_dir);
    write_matrix_csv((dir / "median.csv").string(), windows, median, art.ds.node_ids);
    write_matrix_csv((dir / "q05.csv").string(), windows, q05, art.ds.node_ids);
    write_matrix_csv((dir / "q95.csv").string(), windows, q95, art.ds.node_ids);
    write_matrix_csv((dir / "mask.csv").string(), windows, mask, art.ds.node_ids);
    std::vector<Tensor> observed;
    for (const auto& wi : ws) observed.push_back(wi.window->observed);
    write_matrix_csv((dir / "truth.csv").string(), windows, truth, art.ds.node_ids, observed.data());

    if (cfg.write_samples) {
        std::ofstream out(dir / "samples.csv");
        if (!out) throw std::runtime_error("cannot write samples.csv");
        out << "window,sample,node,step,value\n";
        for (std::size_t w = 0; w < ws.size(); ++w)
            for (std::size_t s = 0; s < ws[w].result.samples.size(); ++s) {
                const Tensor& g = ws[w].result.samples[s];
                for (int i = 0; i < g.dim(0); ++i)
                    for (int l = 0; l < g.dim(1); ++l) {
                        char buf[96];
                        std::snprintf(buf, sizeof(buf), "%zu,%zu,%d,%d,%.17g\n", w, s, i, l, g(i, l));
                        out << buf;
                    }
            }
    }

    for (int node : parse_plot_nodes(cfg, art.ds.node_ids)) {
        SeriesPlot plot;
        plot.title = art.ds.node_ids[static_cast<std::size_t>(node)];
        for (std::size_t w = 0; w < ws.size(); ++w) {
            const Window& win = *ws[w].window;
            for (int l = 0; l < win.steps(); ++l) {
                plot.median.push_back(median[w](node, l));
                plot.q05.push_back(q05[w](node, l));
                plot.q95.push_back(q95[w](node, l));
                plot.truth.push_back(win.observed(node, l) != 0.0
                                         ? truth[w](node, l)
                                         : std::numeric_limits<double>::quiet_NaN());
                const bool given = cond[w](node, l) != 0.0;
                plot.observed.push_back(given);
                plot.observed_values.push_back(given ? truth[w](node, l) : 0.0);
            }
        }
        std::ofstream out(dir / ("plot_" + plot.title + ".svg"));
        if (!out) throw std::runtime_error("cannot write node plot");
        out << render_series_plot(plot);
    }

    if (art.out.has_metrics) write_metrics(cfg, art.out);
    std::cout << "impute: " << ws.size() << " windows, " << cfg.samples << " samples each";
    if (art.out.has_metrics)
        std::cout << ", mae " << art.out.metrics.mae << ", crps " << art.out.metrics.crps;
    std::cout << '\n';
    return 0;
}

int cmd_evaluate(const RunConfig& cfg) {
    echo_config(cfg);
    ImputeArtifacts art = run_imputation(cfg);
    if (!art.out.has_metrics) throw std::runtime_error("empty evaluation mask");
    write_metrics(cfg, art.out);
    std::cout << "evaluate: mae " << art.out.metrics.mae << ", mse " << art.out.metrics.mse
              << ", crps " << art.out.metrics.crps << " over "
              << static_cast<long long>(art.out.metrics.cells) << " cells\n";
    return 0;
}

int cmd_simulate_mask(const RunConfig& cfg) {
    echo_config(cfg);
    Dataset ds = load_series(series_path(cfg), coords_path(cfg), cfg.data);
    std::vector<MaskPlan> plans = build_eval_plans(ds, cfg);
    for (std::size_t wi = 0; wi < plans.size(); ++wi) {
        char name[48];
        std::snprintf(name, sizeof(name), "mask_w%03zu.csv", wi);
        std::vector<const Window*> one = {&ds.eval_windows[wi]};
        std::vector<Tensor> grid = {plans[wi].target};
        write_matrix_csv((fs::path(cfg.out_dir) / name).string(), one, grid, ds.node_ids);
    }
    std::cout << "simulate-mask: wrote " << plans.size() << " mask matrices\n";
    return 0;
}

int classify(const std::exception& e) {
    if (dynamic_cast<const std::invalid_argument*>(&e) != nullptr) return 2;  // bad config
    const std::string msg = e.what();
    if (msg.find("cannot open") != std::string::npos || msg.find("cannot read") != std::string::npos)
        return 3;  // missing file
    if (msg.find("diverged") != std::string::npos) return 4;
    if (msg.find("checkpoint") != std::string::npos) return 5;  // mismatch or corruption
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conditional-diffusion spatiotemporal imputation"};
    app.require_subcommand(1);
    Flags f;
    auto* train_cmd = app.add_subcommand("train", "fit the noise-prediction model");
    auto* impute_cmd = app.add_subcommand("impute", "sample imputations and plots");
    auto* evaluate_cmd = app.add_subcommand("evaluate", "score imputations on a manual mask");
    auto* mask_cmd = app.add_subcommand("simulate-mask", "emit evaluation mask matrices");
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
    for (auto* cmd : {train_cmd, impute_cmd, evaluate_cmd, mask_cmd, synth_cmd})
        add_common_flags(cmd, f);
    CLI11_PARSE(app, argc, argv);

    try {
        const RunConfig cfg = effective_config(f);
        if (synth_cmd->parsed()) return cmd_synth(cfg);
        if (train_cmd->parsed()) return cmd_train(cfg);
        if (impute_cmd->parsed()) return cmd_impute(cfg);
        if (evaluate_cmd->parsed()) return cmd_evaluate(cfg);
        if (mask_cmd->parsed()) return cmd_simulate_mask(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return classify(e);
    }
    return 1;
}
