#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stimpute/autodiff.hpp"
#include "stimpute/baselines.hpp"
#include "stimpute/conditioning.hpp"
#include "stimpute/data.hpp"
#include "stimpute/diffusion.hpp"
#include "stimpute/masking.hpp"
#include "stimpute/metrics.hpp"
#include "stimpute/model.hpp"

namespace stimpute {

struct TrainConfig {
    int batch_size = 16;
    int epochs = 200;
    double base_lr = 1e-3;
    double decayed_lr = 1e-4;       // from 75% of the epochs onward
    double final_lr = 1e-5;         // from 90% of the epochs onward
    double validation_fraction = 0.0;  // tail share of windows held out for snapshots
    StrategyConfig strategy;
    std::uint64_t seed = 1;

    void validate() const {
        if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
        if (epochs < 0) throw std::invalid_argument("epoch count must be nonnegative");
        if (!(base_lr > 0.0 && decayed_lr > 0.0 && final_lr > 0.0))
            throw std::invalid_argument("learning rates must be positive");
        if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
            throw std::invalid_argument("validation fraction must be in [0,1)");
    }
};

/// Piecewise-constant decay: base rate, then fixed drops at 75% and 90% of the
/// total epochs. Pure function of the 1-based epoch index.
inline double learning_rate(const TrainConfig& cfg, int epoch) {
    const int first = static_cast<int>(std::ceil(0.75 * cfg.epochs));
    const int second = static_cast<int>(std::ceil(0.90 * cfg.epochs));
    if (epoch >= second) return cfg.final_lr;
    if (epoch >= first) return cfg.decayed_lr;
    return cfg.base_lr;
}

struct LossPoint {
    int epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    ParamStore params;
    std::vector<LossPoint> trace;
};

namespace engine_detail {

/// Scales all gradients so their global norm does not exceed max_norm.
inline void clip_gradients(ParamStore& ps, double max_norm) {
    double sq = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) sq += ps[i].grad.vec().squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (std::size_t i = 0; i < ps.size(); ++i) ps[i].grad.vec() *= s;
    }
}

/// Adaptive moment update with bias correction; step is 1-based.
inline void adam_step(ParamStore& ps, double lr, long long step) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        Param& p = ps[i];
        p.m.vec() = b1 * p.m.vec() + (1.0 - b1) * p.grad.vec();
        p.v.vec() = b2 * p.v.vec() + (1.0 - b2) * p.grad.vec().cwiseProduct(p.grad.vec());
        p.value.vec().array() -=
            lr * (p.m.vec().array() / c1) / ((p.v.vec().array() / c2).sqrt() + eps);
    }
}

/// One masked denoising objective evaluation; returns the loss node, or a
/// nothing flag when the drawn mask has no target cells.
inline std::pair<bool, double> window_loss(Tape& tape, ParamStore& ps, const ModelConfig& mcfg,
                                           const Window& w, const MaskPlan& plan,
                                           const Supports& sup, const DiffusionSchedule& sched,
                                           Rng& rng, Var* out_node) {
    double target_cells = 0.0;
    for (std::size_t i = 0; i < plan.target.size(); ++i) target_cells += plan.target[i];
    if (target_cells == 0.0) return {false, 0.0};

    Tensor x_cond = linear_interpolate(w, plan);
    const int t_step = static_cast<int>(rng.uniform_int(1, sched.T));
    Tensor eps({w.nodes(), w.steps()});
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
    Tensor noisy = forward_sample(w.values, t_step, eps, sched);
    for (std::size_t i = 0; i < noisy.size(); ++i)
        if (plan.target[i] == 0.0) noisy[i] = 0.0;

    Var pred = predict_noise_graph(tape, ps, mcfg, x_cond, noisy, sup, t_step, sched.T);
    Var loss = masked_mean_sq(pred, eps, plan.target);
    *out_node = loss;
    return {true, tape.val(loss)[0]};
}

}  // namespace engine_detail

/// Denoising-objective training over the window set: per batch, draw a mask
/// plan per window, noise the targets at a random diffusion step, average the
/// gradients, clip and step. Returns the parameters plus a per-epoch trace.
/// With a validation fraction set, tail windows are held out and the snapshot
/// with the best (fixed-mask) validation loss is returned instead.
inline TrainResult train(const std::vector<Window>& windows, const Adjacency& adjacency,
                         const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const DiffusionSchedule& sched) {
    tcfg.validate();
    if (windows.empty()) throw std::invalid_argument("no training windows");
    const int n_nodes = windows.front().nodes();
    for (const auto& w : windows)
        if (w.nodes() != n_nodes) throw std::invalid_argument("inconsistent node count");

    TrainResult result;
    result.params = init_params(mcfg, n_nodes, tcfg.seed);
    Supports sup = build_supports(adjacency);

    const auto val_count = static_cast<std::size_t>(
        std::llround(tcfg.validation_fraction * static_cast<double>(windows.size())));
    const std::size_t train_count = windows.size() - val_count;
    if (train_count == 0) throw std::invalid_argument("no training windows after validation split");

    Rng root(tcfg.seed);
    ParamStore& ps = result.params;
    ParamStore best;       // engaged only when validating
    double best_val = std::numeric_limits<double>::infinity();
    long long opt_step = 0;

    std::vector<std::size_t> order(train_count);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        const double lr = learning_rate(tcfg, epoch);
        Rng erng = root.substream("epoch", static_cast<std::uint64_t>(epoch));
        for (std::size_t i = train_count; i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(erng.uniform_int(0, static_cast<long>(i) - 1))]);

        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t start = 0; start < train_count;
             start += static_cast<std::size_t>(tcfg.batch_size)) {
            const std::size_t stop =
                std::min(train_count, start + static_cast<std::size_t>(tcfg.batch_size));
            ps.zero_grad();
            int contributing = 0;
            for (std::size_t i = start; i < stop; ++i) {
                Tape tape;
                Var loss_node;
                MaskPlan plan = training_mask(windows[order[i]], erng, tcfg.strategy);
                auto [has, loss] = engine_detail::window_loss(
                    tape, ps, mcfg, windows[order[i]], plan, sup, sched, erng, &loss_node);
                if (!has) continue;
                if (!std::isfinite(loss)) throw std::runtime_error("training diverged");
                tape.backward(loss_node);
                loss_sum += loss;
                ++loss_count;
                ++contributing;
            }
            if (contributing == 0) continue;
            for (std::size_t p = 0; p < ps.size(); ++p)
                ps[p].grad.vec() *= 1.0 / static_cast<double>(contributing);
            engine_detail::clip_gradients(ps, 1.0);
            engine_detail::adam_step(ps, lr, ++opt_step);
        }
        result.trace.push_back(
            {epoch, loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0, lr});

        if (val_count > 0) {
            double vsum = 0.0;
            std::size_t vcnt = 0;
            for (std::size_t i = train_count; i < windows.size(); ++i) {
                // same masks and noise every epoch, so scores are comparable
                Rng vrng = root.substream("val", static_cast<std::uint64_t>(i));
                Tape tape(false);
                Var node;
                MaskPlan vplan = training_mask(windows[i], vrng, tcfg.strategy);
                auto [has, loss] = engine_detail::window_loss(tape, ps, mcfg, windows[i], vplan,
                                                              sup, sched, vrng, &node);
                if (!has) continue;
                vsum += loss;
                ++vcnt;
            }
            const double vloss = vcnt ? vsum / static_cast<double>(vcnt) : 0.0;
            if (vloss < best_val) {
                best_val = vloss;
                best = ps;
            }
        }
    }

    if (val_count > 0 && std::isfinite(best_val)) result.params = std::move(best);
    return result;
}

// ---------------------------------------------------------------------------
// batch imputation

struct WindowImputation {
    ImputationResult result;  // denormalized
    MaskPlan plan;
    const Window* window = nullptr;
};

struct EvalMetrics {
    double mae = 0.0;
    double mse = 0.0;
    double crps = 0.0;
    double cells = 0.0;  // pooled target-cell count across windows
};

struct ImputeOutput {
    std::vector<WindowImputation> windows;
    EvalMetrics metrics;
    bool has_metrics = false;
};

/// Runs reverse-diffusion sampling per window with the given mask plans,
/// denormalizes, and pools error metrics over every target cell. Windows with
/// empty targets contribute results but no metrics.
inline ImputeOutput impute_dataset(const std::vector<Window>& windows,
                                   const std::vector<MaskPlan>& plans, const Adjacency& adjacency,
                                   ParamStore& params, const ModelConfig& mcfg,
                                   const DiffusionSchedule& sched, const NormStats& stats,
                                   int n_samples, std::uint64_t seed) {
    if (windows.size() != plans.size())
        throw std::invalid_argument("one mask plan per window required");
    Supports sup = build_supports(adjacency);
    if (!windows.empty() &&
        params.at("aux.node_embed").value.dim(0) != windows.front().nodes())
        throw std::invalid_argument("node count differs from checkpoint");

    ImputeOutput out;
    Rng root(seed);
    double abs_sum = 0.0, sq_sum = 0.0, crps_sum = 0.0, cells = 0.0;
    for (std::size_t wi = 0; wi < windows.size(); ++wi) {
        const Window& w = windows[wi];
        const MaskPlan& plan = plans[wi];
        Tensor x_cond = linear_interpolate(w, plan);
        PriorCache cache = build_prior_cache(params, mcfg, x_cond, sup, sched.T);
        DenoiseFn model = [&](const Tensor& noisy, int step) {
            return predict_noise_cached(params, mcfg, cache, sup, noisy, step);
        };
        Rng wrng = root.substream("window", static_cast<std::uint64_t>(wi));
        ImputationResult res = sample_imputation(w, plan, model, sched, n_samples, wrng);

        Tensor truth_raw = denormalize(w.values, stats);
        for (auto& s : res.samples) s = denormalize(s, stats);
        res.median = denormalize(res.median, stats);
        res.q05 = denormalize(res.q05, stats);
        res.q95 = denormalize(res.q95, stats);

        double target_cells = 0.0;
        for (std::size_t i = 0; i < plan.target.size(); ++i) target_cells += plan.target[i];
        if (target_cells > 0.0) {
            abs_sum += mae(res.median, truth_raw, plan.target) * target_cells;
            sq_sum += mse(res.median, truth_raw, plan.target) * target_cells;
            crps_sum += crps_dataset(res, truth_raw, plan.target) * target_cells;
            cells += target_cells;
        }
        out.windows.push_back({std::move(res), plan, &windows[wi]});
    }
    if (cells > 0.0) {
        out.metrics = {abs_sum / cells, sq_sum / cells, crps_sum / cells, cells};
        out.has_metrics = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// checkpointing

struct Checkpoint {
    ModelConfig model;
    int T = 0;
    double beta1 = 0.0;
    double betaT = 0.0;
    int n_nodes = 0;
    NormStats stats;
    Adjacency adjacency;
    ParamStore params;
};

namespace engine_detail {

constexpr char kMagic[8] = {'S', 'T', 'I', 'M', 'P', 'U', 'T', 'E'};
constexpr std::uint32_t kVersion = 1;

inline nlohmann::json model_to_json(const ModelConfig& m) {
    return {{"d", m.d},
            {"heads", m.heads},
            {"layers", m.layers},
            {"virtual_nodes", m.virtual_nodes},
            {"step_embed_width", m.step_embed_width},
            {"time_encode_width", m.time_encode_width},
            {"node_embed_width", m.node_embed_width},
            {"mpnn_order", m.mpnn_order},
            {"adaptive_width", m.adaptive_width},
            {"zero_init_head", m.zero_init_head}};
}

inline ModelConfig model_from_json(const nlohmann::json& j) {
    ModelConfig m;
    m.d = j.at("d");
    m.heads = j.at("heads");
    m.layers = j.at("layers");
    m.virtual_nodes = j.at("virtual_nodes");
    m.step_embed_width = j.at("step_embed_width");
    m.time_encode_width = j.at("time_encode_width");
    m.node_embed_width = j.at("node_embed_width");
    m.mpnn_order = j.at("mpnn_order");
    m.adaptive_width = j.at("adaptive_width");
    m.zero_init_head = j.at("zero_init_head");
    return m;
}

}  // namespace engine_detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    nlohmann::json header;
    header["model"] = engine_detail::model_to_json(ck.model);
    header["schedule"] = {{"T", ck.T}, {"beta1", ck.beta1}, {"betaT", ck.betaT}};
    header["n_nodes"] = ck.n_nodes;
    header["norm_mean"] = ck.stats.mean;
    header["norm_std"] = ck.stats.std;
    nlohmann::json dir = nlohmann::json::array();
    auto describe = [&](const std::string& name, const Tensor& t) {
        dir.push_back({{"name", name}, {"shape", t.shape()}});
    };
    for (std::size_t i = 0; i < ck.params.size(); ++i)
        describe(ck.params[i].name, ck.params[i].value);
    describe("adjacency", ck.adjacency.weights);
    header["tensors"] = std::move(dir);

    const std::string head = header.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f.write(engine_detail::kMagic, sizeof(engine_detail::kMagic));
    const std::uint32_t version = engine_detail::kVersion;
    const auto head_len = static_cast<std::uint32_t>(head.size());
    f.write(reinterpret_cast<const char*>(&version), sizeof(version));
    f.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
    f.write(head.data(), static_cast<std::streamsize>(head.size()));
    auto dump = [&](const Tensor& t) {
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    };
    for (std::size_t i = 0; i < ck.params.size(); ++i) dump(ck.params[i].value);
    dump(ck.adjacency.weights);
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    std::uint32_t version = 0, head_len = 0;
    f.read(magic, sizeof(magic));
    f.read(reinterpret_cast<char*>(&version), sizeof(version));
    f.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
    if (!f || std::memcmp(magic, engine_detail::kMagic, sizeof(magic)) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    if (version != engine_detail::kVersion)
        throw std::runtime_error("unsupported checkpoint version");
    std::string head(head_len, '\0');
    f.read(head.data(), head_len);
    if (!f) throw std::runtime_error("corrupt checkpoint file: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(head);
    } catch (const nlohmann::json::exception&) {
        throw std::runtime_error("corrupt checkpoint file: " + path);
    }
    Checkpoint ck;
    ck.model = engine_detail::model_from_json(header.at("model"));
    ck.T = header.at("schedule").at("T");
    ck.beta1 = header.at("schedule").at("beta1");
    ck.betaT = header.at("schedule").at("betaT");
    ck.n_nodes = header.at("n_nodes");
    ck.stats.mean = header.at("norm_mean").get<std::vector<double>>();
    ck.stats.std = header.at("norm_std").get<std::vector<double>>();

    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name");
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!f) throw std::runtime_error("corrupt checkpoint file: " + path);
        if (name == "adjacency")
            ck.adjacency.weights = std::move(t);
        else
            ck.params.add(name, std::move(t));
    }
    f.peek();
    if (!f.eof()) throw std::runtime_error("corrupt checkpoint file: " + path);
    return ck;
}

}  // namespace stimpute
