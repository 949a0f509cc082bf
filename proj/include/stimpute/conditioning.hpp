#pragma once

#include "stimpute/data.hpp"
#include "stimpute/masking.hpp"

namespace stimpute {

/// Completes each node's series from its conditioning observations: linear
/// interpolation between neighbours in time, nearest-value hold at the edges,
/// zero (the per-node training mean) when a node has no evidence at all.
/// Deterministic; introduces no randomness into the series.
inline Tensor linear_interpolate(const Tensor& values, const Tensor& cond_mask) {
    const int n = values.dim(0), L = values.dim(1);
    Tensor out = Tensor::zeros({n, L});
    for (int i = 0; i < n; ++i) {
        int prev = -1;
        for (int l = 0; l < L; ++l) {
            if (cond_mask(i, l) == 0.0) continue;
            out(i, l) = values(i, l);
            if (prev < 0) {
                for (int j = 0; j < l; ++j) out(i, j) = values(i, l);  // leading hold
            } else {
                const double lo = values(i, prev), hi = values(i, l);
                for (int j = prev + 1; j < l; ++j)
                    out(i, j) = lo + (hi - lo) * static_cast<double>(j - prev) /
                                          static_cast<double>(l - prev);
            }
            prev = l;
        }
        if (prev >= 0)
            for (int j = prev + 1; j < L; ++j) out(i, j) = values(i, prev);  // trailing hold
        // prev < 0: node has no conditioning values; row stays zero.
    }
    return out;
}

inline Tensor linear_interpolate(const Window& w, const MaskPlan& plan) {
    return linear_interpolate(w.values, plan.cond);
}

}  // namespace stimpute
