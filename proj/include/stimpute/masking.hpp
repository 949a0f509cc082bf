#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "stimpute/data.hpp"
#include "stimpute/rng.hpp"

namespace stimpute {

/// Splits a window's observed cells into imputation targets and conditioning.
struct MaskPlan {
    Tensor target;  // 1 = cell the model must fill (its value is hidden)
    Tensor cond;    // 1 = cell whose value is given as evidence

    void validate(const Tensor& observed) const {
        for (std::size_t i = 0; i < target.size(); ++i) {
            if (target[i] != 0.0 && target[i] != 1.0) throw std::logic_error("non-binary target mask");
            if (cond[i] != 0.0 && cond[i] != 1.0) throw std::logic_error("non-binary cond mask");
            if (target[i] == 1.0 && cond[i] == 1.0) throw std::logic_error("target and cond overlap");
            if ((target[i] == 1.0 || cond[i] == 1.0) && observed[i] == 0.0)
                throw std::logic_error("mask covers unobserved cell");
        }
    }
};

struct StrategyConfig {
    std::string kind = "hybrid";       // point | block | hybrid
    double block_prob_ceiling = 0.15;  // per-node block probability upper bound
    double extra_fraction = 0.05;      // extra random points in block strategy
    double hybrid_point_prob = 0.5;
    bool historical = false;                   // hybrid tail uses pattern pool
    const std::vector<Window>* pool = nullptr;  // source of historical patterns
};

namespace detail {

inline std::vector<std::size_t> observed_cells(const Tensor& observed) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < observed.size(); ++i)
        if (observed[i] != 0.0) idx.push_back(i);
    return idx;
}

/// Marks `count` uniformly chosen observed cells (without replacement).
inline void mark_random(Tensor& target, std::vector<std::size_t>& cells, std::size_t count,
                        Rng& rng) {
    count = std::min(count, cells.size());
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j =
            i + static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(cells.size() - 1 - i)));
        std::swap(cells[i], cells[j]);
        target[cells[i]] = 1.0;
    }
}

inline MaskPlan finish(Tensor target, const Tensor& observed) {
    MaskPlan plan;
    plan.cond = Tensor::zeros_like(observed);
    for (std::size_t i = 0; i < observed.size(); ++i)
        if (observed[i] != 0.0 && target[i] == 0.0) plan.cond[i] = 1.0;
    plan.target = std::move(target);
    return plan;
}

}  // namespace detail

/// Point strategy with the masked percentage fixed by the caller.
inline MaskPlan point_mask_fraction(const Window& w, Rng& rng, double percent) {
    auto cells = detail::observed_cells(w.observed);
    const auto count =
        static_cast<std::size_t>(std::llround(percent / 100.0 * static_cast<double>(cells.size())));
    Tensor target = Tensor::zeros_like(w.observed);
    detail::mark_random(target, cells, count, rng);
    return detail::finish(std::move(target), w.observed);
}

/// Draws a percentage uniformly from [0,100] and masks that share of the
/// observed cells.
inline MaskPlan point_mask(const Window& w, Rng& rng) {
    const double percent = rng.uniform(0.0, 100.0);
    return point_mask_fraction(w, rng, percent);
}

/// Per node: with probability drawn from [0, ceiling], hide one contiguous run
/// of length uniform in [ceil(L/2), L]; afterwards hide an extra fraction of
/// all observed cells at random.
inline MaskPlan block_mask(const Window& w, Rng& rng, const StrategyConfig& cfg) {
    const int n = w.nodes(), L = w.steps();
    if (L < 2) throw std::invalid_argument("block strategy needs at least two steps");
    Tensor target = Tensor::zeros_like(w.observed);
    const int min_len = (L + 1) / 2;
    for (int i = 0; i < n; ++i) {
        const double p = rng.uniform(0.0, cfg.block_prob_ceiling);
        if (rng.uniform() >= p) continue;
        const int len = static_cast<int>(rng.uniform_int(min_len, L));
        const int start = static_cast<int>(rng.uniform_int(0, L - len));
        for (int l = start; l < start + len; ++l)
            if (w.observed(i, l) != 0.0) target(i, l) = 1.0;
    }
    auto cells = detail::observed_cells(w.observed);
    const auto extra = static_cast<std::size_t>(
        std::llround(cfg.extra_fraction * static_cast<double>(cells.size())));
    detail::mark_random(target, cells, extra, rng);
    return detail::finish(std::move(target), w.observed);
}

/// Copies the missingness pattern of another window: its unobserved cells
/// become targets here (where observed).
inline MaskPlan historical_mask(const Window& w, const Window& pattern) {
    if (!pattern.observed.same_shape(w.observed))
        throw std::invalid_argument("historical pattern shape mismatch");
    Tensor target = Tensor::zeros_like(w.observed);
    for (std::size_t i = 0; i < target.size(); ++i)
        if (pattern.observed[i] == 0.0 && w.observed[i] != 0.0) target[i] = 1.0;
    return detail::finish(std::move(target), w.observed);
}

/// Fair coin between the point strategy and either the block strategy or a
/// pattern drawn from the historical pool.
inline MaskPlan hybrid_mask(const Window& w, Rng& rng, const StrategyConfig& cfg) {
    if (rng.uniform() < cfg.hybrid_point_prob) return point_mask(w, rng);
    if (cfg.historical) {
        if (!cfg.pool || cfg.pool->empty())
            throw std::invalid_argument("historical strategy needs a nonempty pattern pool");
        const auto pick = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<long>(cfg.pool->size()) - 1));
        return historical_mask(w, (*cfg.pool)[pick]);
    }
    return block_mask(w, rng, cfg);
}

inline MaskPlan training_mask(const Window& w, Rng& rng, const StrategyConfig& cfg) {
    if (cfg.kind == "point") return point_mask(w, rng);
    if (cfg.kind == "block") return block_mask(w, rng, cfg);
    if (cfg.kind == "hybrid") return hybrid_mask(w, rng, cfg);
    throw std::invalid_argument("unknown mask strategy: " + cfg.kind);
}

// ---------------------------------------------------------------------------
// evaluation patterns

struct EvalPattern {
    std::string kind = "point";     // point | block | failure
    std::vector<int> failure_nodes;  // for kind == failure
};

/// Parses "point", "block" or "failure:3,7" (indices or node ids).
inline EvalPattern parse_pattern(const std::string& text, const std::vector<std::string>& node_ids) {
    EvalPattern p;
    if (text == "point" || text == "block") {
        p.kind = text;
        return p;
    }
    if (text.rfind("failure:", 0) == 0) {
        p.kind = "failure";
        std::string rest = text.substr(8);
        std::string tok;
        auto flush = [&] {
            if (tok.empty()) return;
            for (std::size_t i = 0; i < node_ids.size(); ++i)
                if (node_ids[i] == tok) {
                    p.failure_nodes.push_back(static_cast<int>(i));
                    tok.clear();
                    return;
                }
            char* end = nullptr;
            const long v = std::strtol(tok.c_str(), &end, 10);
            if (end == tok.c_str() || *end != '\0' || v < 0 ||
                v >= static_cast<long>(node_ids.size()))
                throw std::invalid_argument("unknown node id in failure pattern: " + tok);
            p.failure_nodes.push_back(static_cast<int>(v));
            tok.clear();
        };
        for (char c : rest) {
            if (c == ',')
                flush();
            else
                tok += c;
        }
        flush();
        if (p.failure_nodes.empty())
            throw std::invalid_argument("failure pattern lists no nodes");
        return p;
    }
    throw std::invalid_argument("unknown mask pattern: " + text);
}

/// 25% of observed cells hidden uniformly at random.
inline MaskPlan eval_point_mask(const Window& w, Rng& rng) {
    auto cells = detail::observed_cells(w.observed);
    const auto count = static_cast<std::size_t>(
        std::llround(0.25 * static_cast<double>(cells.size())));
    Tensor target = Tensor::zeros_like(w.observed);
    detail::mark_random(target, cells, count, rng);
    return detail::finish(std::move(target), w.observed);
}

/// 5% of observed cells at random, plus per sensor and step a 0.15% chance of
/// an outage lasting 1 to 4 hours (converted via the sampling period, clipped
/// at the window end). Drawn outage lengths are reported via run_lengths.
inline MaskPlan eval_block_mask(const Window& w, Rng& rng, int period_minutes,
                                std::vector<int>* run_lengths = nullptr) {
    if (period_minutes <= 0 || period_minutes > 60)
        throw std::invalid_argument("block pattern needs a sampling period in (0, 60] minutes");
    const int n = w.nodes(), L = w.steps();
    const int steps_per_hour = 60 / period_minutes;
    Tensor target = Tensor::zeros_like(w.observed);
    for (int i = 0; i < n; ++i)
        for (int l = 0; l < L; ++l)
            if (rng.uniform() < 0.0015) {
                const int len = static_cast<int>(rng.uniform_int(steps_per_hour, 4 * steps_per_hour));
                if (run_lengths) run_lengths->push_back(len);
                for (int j = l; j < std::min(L, l + len); ++j)
                    if (w.observed(i, j) != 0.0) target(i, j) = 1.0;
            }
    auto cells = detail::observed_cells(w.observed);
    const auto extra =
        static_cast<std::size_t>(std::llround(0.05 * static_cast<double>(cells.size())));
    detail::mark_random(target, cells, extra, rng);
    return detail::finish(std::move(target), w.observed);
}

/// Every observation of the listed nodes becomes a target.
inline MaskPlan sensor_failure_mask(const Window& w, const std::vector<int>& nodes) {
    Tensor target = Tensor::zeros_like(w.observed);
    for (int idx : nodes) {
        if (idx < 0 || idx >= w.nodes())
            throw std::invalid_argument("unknown node index in sensor failure: " +
                                        std::to_string(idx));
        for (int l = 0; l < w.steps(); ++l)
            if (w.observed(idx, l) != 0.0) target(idx, l) = 1.0;
    }
    return detail::finish(std::move(target), w.observed);
}

inline MaskPlan simulate_eval_missing(const Window& w, const EvalPattern& pattern, Rng& rng,
                                      int period_minutes, std::vector<int>* run_lengths = nullptr) {
    if (pattern.kind == "point") return eval_point_mask(w, rng);
    if (pattern.kind == "block") return eval_block_mask(w, rng, period_minutes, run_lengths);
    if (pattern.kind == "failure") return sensor_failure_mask(w, pattern.failure_nodes);
    throw std::invalid_argument("unknown mask pattern: " + pattern.kind);
}

/// Hides the listed nodes' observations from a training window (outage during
/// training): they leave both the observed set and any mask plans built on it.
inline Window apply_failure_to_window(const Window& w, const std::vector<int>& nodes) {
    Window out = w;
    for (int idx : nodes) {
        if (idx < 0 || idx >= w.nodes())
            throw std::invalid_argument("unknown node index in sensor failure: " +
                                        std::to_string(idx));
        for (int l = 0; l < w.steps(); ++l) {
            out.observed(idx, l) = 0.0;
            out.values(idx, l) = 0.0;
        }
    }
    return out;
}

}  // namespace stimpute
