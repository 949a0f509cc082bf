#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "stimpute/diffusion.hpp"
#include "stimpute/tensor.hpp"

namespace stimpute {

inline constexpr int kCrpsLevels = 19;  // quantile levels 0.05, 0.10, ..., 0.95

inline double mae(const Tensor& pred, const Tensor& truth, const Tensor& mask) {
    if (!pred.same_shape(truth) || !pred.same_shape(mask))
        throw std::invalid_argument("metric shape mismatch");
    double sum = 0.0, count = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (mask[i] != 0.0) {
            sum += std::abs(pred[i] - truth[i]);
            count += 1.0;
        }
    if (count == 0.0) throw std::invalid_argument("empty evaluation mask");
    return sum / count;
}

inline double mse(const Tensor& pred, const Tensor& truth, const Tensor& mask) {
    if (!pred.same_shape(truth) || !pred.same_shape(mask))
        throw std::invalid_argument("metric shape mismatch");
    double sum = 0.0, count = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (mask[i] != 0.0) {
            const double e = pred[i] - truth[i];
            sum += e * e;
            count += 1.0;
        }
    if (count == 0.0) throw std::invalid_argument("empty evaluation mask");
    return sum / count;
}

/// Pinball loss (alpha - 1{x < q}) (x - q); nonnegative for alpha in (0,1).
inline double quantile_loss(double q_value, double x, double alpha) {
    return (alpha - (x < q_value ? 1.0 : 0.0)) * (x - q_value);
}

/// Empirical quantile with linear interpolation between order statistics.
inline double empirical_quantile(std::vector<double> v, double alpha) {
    if (v.empty()) throw std::invalid_argument("empty ensemble");
    std::sort(v.begin(), v.end());
    const double h = alpha * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

inline std::array<double, kCrpsLevels> ensemble_quantiles(std::vector<double> samples) {
    if (samples.empty()) throw std::invalid_argument("empty ensemble");
    std::sort(samples.begin(), samples.end());
    std::array<double, kCrpsLevels> q{};
    for (int i = 1; i <= kCrpsLevels; ++i) {
        const double h = 0.05 * i * static_cast<double>(samples.size() - 1);
        const auto lo = static_cast<std::size_t>(h);
        q[static_cast<std::size_t>(i - 1)] =
            lo + 1 >= samples.size()
                ? samples.back()
                : samples[lo] + (h - static_cast<double>(lo)) * (samples[lo + 1] - samples[lo]);
    }
    return q;
}

/// Discretized CRPS: average of doubled pinball losses over the 19 levels.
inline double crps_from_quantiles(const std::array<double, kCrpsLevels>& q, double x) {
    double sum = 0.0;
    for (int i = 1; i <= kCrpsLevels; ++i)
        sum += 2.0 * quantile_loss(q[static_cast<std::size_t>(i - 1)], x, 0.05 * i);
    return sum / kCrpsLevels;
}

inline double crps(const std::vector<double>& samples, double x) {
    return crps_from_quantiles(ensemble_quantiles(samples), x);
}

/// Mean per-cell CRPS of a sample ensemble over mask=1 cells.
inline double crps_dataset(const ImputationResult& result, const Tensor& truth,
                           const Tensor& mask) {
    if (result.samples.empty()) throw std::invalid_argument("empty ensemble");
    if (!truth.same_shape(mask) || !truth.same_shape(result.samples.front()))
        throw std::invalid_argument("metric shape mismatch");
    double sum = 0.0, count = 0.0;
    std::vector<double> cell(result.samples.size());
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (mask[i] != 0.0) {
            for (std::size_t s = 0; s < result.samples.size(); ++s) cell[s] = result.samples[s][i];
            sum += crps(cell, truth[i]);
            count += 1.0;
        }
    if (count == 0.0) throw std::invalid_argument("empty evaluation mask");
    return sum / count;
}

/// Inverse standard-normal CDF (Acklam's rational approximation, |eps| < 1.2e-9).
inline double inverse_normal_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("probability must be in (0,1)");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1.0 - plow;
    double q, r;
    if (p < plow) {
        q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > phigh) {
        q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    q = p - 0.5;
    r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace stimpute
