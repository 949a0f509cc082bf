#pragma once

#include <cmath>
#include <vector>

#include "stimpute/metrics.hpp"
#include "stimpute/tensor.hpp"

namespace stimpute {

namespace baseline_detail {

struct NodeGaussian {
    double mean = 0.0;
    double std = 0.0;
    double count = 0.0;
};

/// Per-node mean/std over evidence cells, with a pooled fallback for nodes
/// that have no evidence at all.
inline std::vector<NodeGaussian> fit_node_gaussians(const Tensor& values, const Tensor& cond) {
    const int n = values.dim(0), L = values.dim(1);
    std::vector<NodeGaussian> fit(static_cast<std::size_t>(n));
    double gsum = 0.0, gsq = 0.0, gcount = 0.0;
    for (int i = 0; i < n; ++i) {
        double sum = 0.0, sq = 0.0, count = 0.0;
        for (int l = 0; l < L; ++l)
            if (cond(i, l) != 0.0) {
                sum += values(i, l);
                sq += values(i, l) * values(i, l);
                count += 1.0;
            }
        gsum += sum;
        gsq += sq;
        gcount += count;
        if (count > 0.0) {
            const double m = sum / count;
            fit[static_cast<std::size_t>(i)] = {m, std::sqrt(std::max(0.0, sq / count - m * m)),
                                                count};
        }
    }
    const double gm = gcount > 0.0 ? gsum / gcount : 0.0;
    const double gs = gcount > 0.0 ? std::sqrt(std::max(0.0, gsq / gcount - gm * gm)) : 0.0;
    for (auto& f : fit)
        if (f.count == 0.0) f = {gm, gs, 0.0};
    return fit;
}

}  // namespace baseline_detail

/// Per-node mean of the evidence cells, broadcast over the window.
inline Tensor mean_baseline(const Tensor& values, const Tensor& cond) {
    const int n = values.dim(0), L = values.dim(1);
    auto fit = baseline_detail::fit_node_gaussians(values, cond);
    Tensor out({n, L});
    for (int i = 0; i < n; ++i)
        for (int l = 0; l < L; ++l) out(i, l) = fit[static_cast<std::size_t>(i)].mean;
    return out;
}

/// Adjacency-weighted average of the other nodes' evidence at the same step;
/// per-node mean fallback where no weighted neighbor has evidence.
inline Tensor neighbor_average_baseline(const Tensor& values, const Tensor& cond,
                                        const Tensor& adjacency) {
    const int n = values.dim(0), L = values.dim(1);
    auto fit = baseline_detail::fit_node_gaussians(values, cond);
    Tensor out({n, L});
    for (int i = 0; i < n; ++i)
        for (int l = 0; l < L; ++l) {
            double num = 0.0, den = 0.0;
            for (int j = 0; j < n; ++j)
                if (j != i && cond(j, l) != 0.0) {
                    num += adjacency(i, j) * values(j, l);
                    den += adjacency(i, j);
                }
            out(i, l) = den > 0.0 ? num / den : fit[static_cast<std::size_t>(i)].mean;
        }
    return out;
}

/// CRPS of a per-node Gaussian fitted to the evidence, discretized with the
/// same 19 quantile levels as the ensemble metric; mean over mask=1 cells.
inline double gaussian_climatology_crps(const Tensor& values, const Tensor& cond,
                                        const Tensor& truth, const Tensor& mask) {
    const int n = values.dim(0), L = values.dim(1);
    auto fit = baseline_detail::fit_node_gaussians(values, cond);
    std::vector<std::array<double, kCrpsLevels>> q(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        for (int lev = 1; lev <= kCrpsLevels; ++lev)
            q[static_cast<std::size_t>(i)][static_cast<std::size_t>(lev - 1)] =
                fit[static_cast<std::size_t>(i)].mean +
                fit[static_cast<std::size_t>(i)].std * inverse_normal_cdf(0.05 * lev);
    double sum = 0.0, count = 0.0;
    for (int i = 0; i < n; ++i)
        for (int l = 0; l < L; ++l)
            if (mask(i, l) != 0.0) {
                sum += crps_from_quantiles(q[static_cast<std::size_t>(i)], truth(i, l));
                count += 1.0;
            }
    if (count == 0.0) throw std::invalid_argument("empty evaluation mask");
    return sum / count;
}

}  // namespace stimpute
