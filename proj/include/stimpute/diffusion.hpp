#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "stimpute/masking.hpp"
#include "stimpute/rng.hpp"
#include "stimpute/tensor.hpp"

namespace stimpute {

/// Quadratic-in-sqrt noise schedule with derived per-step quantities.
/// Index convention: entry t-1 holds the value for diffusion step t (1-based).
struct DiffusionSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // running product of alpha
    std::vector<double> sigma2;     // reverse-step variance

    double beta_at(int t) const { return beta[static_cast<std::size_t>(t - 1)]; }
    double alpha_at(int t) const { return alpha[static_cast<std::size_t>(t - 1)]; }
    double alpha_bar_at(int t) const { return alpha_bar[static_cast<std::size_t>(t - 1)]; }
    double sigma2_at(int t) const { return sigma2[static_cast<std::size_t>(t - 1)]; }
};

/// beta_t = ((T-t)/(T-1) * sqrt(beta1) + (t-1)/(T-1) * sqrt(betaT))^2 for
/// t = 1..T; the reverse variance uses the convention alpha_bar_0 = 1, making
/// the final denoising step deterministic.
inline DiffusionSchedule build_schedule(int T, double beta1, double betaT) {
    if (T < 2) throw std::invalid_argument("schedule needs T >= 2");
    if (!(0.0 < beta1 && beta1 < betaT && betaT < 1.0))
        throw std::invalid_argument("schedule needs 0 < beta1 < betaT < 1");
    DiffusionSchedule s;
    s.T = T;
    const double sb1 = std::sqrt(beta1), sbT = std::sqrt(betaT);
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double w = static_cast<double>(t - 1) / static_cast<double>(T - 1);
        // endpoints are pinned: sqrt/square round trips can lose an ulp
        const double b = t == 1   ? beta1
                         : t == T ? betaT
                                  : ((1.0 - w) * sb1 + w * sbT) * ((1.0 - w) * sb1 + w * sbT);
        const double prev_bar = prod;  // alpha_bar_{t-1}, equal to 1 at t=1
        prod *= 1.0 - b;
        s.beta.push_back(b);
        s.alpha.push_back(1.0 - b);
        s.alpha_bar.push_back(prod);
        s.sigma2.push_back((1.0 - prev_bar) / (1.0 - prod) * b);
    }
    return s;
}

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, elementwise.
inline Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps,
                             const DiffusionSchedule& sched) {
    if (!x0.same_shape(eps)) throw std::invalid_argument("forward_sample shape mismatch");
    if (t < 1 || t > sched.T) throw std::invalid_argument("diffusion step out of range");
    const double ab = sched.alpha_bar_at(t);
    Tensor out = x0;
    out.vec() = std::sqrt(ab) * x0.vec() + std::sqrt(1.0 - ab) * eps.vec();
    return out;
}

/// One reverse transition: mean (x_t - beta_t/sqrt(1-alpha_bar_t) eps_hat)
/// divided by sqrt(alpha_t), plus sigma_t * noise.
inline Tensor reverse_step(const Tensor& xt, const Tensor& eps_hat, int t,
                           const DiffusionSchedule& sched, const Tensor& noise) {
    if (!xt.same_shape(eps_hat) || !xt.same_shape(noise))
        throw std::invalid_argument("reverse_step shape mismatch");
    if (t < 1 || t > sched.T) throw std::invalid_argument("diffusion step out of range");
    const double coef = sched.beta_at(t) / std::sqrt(1.0 - sched.alpha_bar_at(t));
    const double inv = 1.0 / std::sqrt(sched.alpha_at(t));
    const double sigma = std::sqrt(sched.sigma2_at(t));
    Tensor out = xt;
    out.vec() = inv * (xt.vec() - coef * eps_hat.vec()) + sigma * noise.vec();
    return out;
}

/// Mean squared noise-prediction residual over target cells; 0 when empty.
inline double training_loss(const Tensor& eps, const Tensor& eps_hat, const Tensor& target_mask) {
    if (!eps.same_shape(eps_hat) || !eps.same_shape(target_mask))
        throw std::invalid_argument("training_loss shape mismatch");
    double sum = 0.0, count = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i)
        if (target_mask[i] != 0.0) {
            const double r = eps[i] - eps_hat[i];
            sum += r * r;
            count += 1.0;
        }
    return count > 0.0 ? sum / count : 0.0;
}

struct ImputationResult {
    std::vector<Tensor> samples;  // each N x L, full grids
    Tensor median;                // per-cell median across samples
    Tensor q05;
    Tensor q95;
};

/// Model callback: given the noisy state restricted to the generation support
/// and the step index, return the predicted noise grid.
using DenoiseFn = std::function<Tensor(const Tensor& noisy_target, int t)>;

namespace detail {

inline double sorted_quantile(std::vector<double>& v, double alpha) {
    std::sort(v.begin(), v.end());
    const double h = alpha * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= v.size()) return v.back();
    const double frac = h - static_cast<double>(lo);
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

}  // namespace detail

/// Generates n_samples reverse-diffusion draws of the window. Cells with
/// cond=1 keep their given values verbatim in every sample; everything else
/// (targets and never-observed cells) is generated. The per-cell median is
/// the deterministic imputation; the 0.05/0.95 band is retained.
inline ImputationResult sample_imputation(const Window& w, const MaskPlan& plan,
                                          const DenoiseFn& model, const DiffusionSchedule& sched,
                                          int n_samples, Rng& rng) {
    if (n_samples < 1) throw std::invalid_argument("need at least one sample");
    const int n = w.nodes(), L = w.steps();
    Tensor gen = Tensor::zeros({n, L});  // generation support: everything not conditioning
    for (std::size_t i = 0; i < gen.size(); ++i) gen[i] = plan.cond[i] == 0.0 ? 1.0 : 0.0;

    ImputationResult res;
    for (int s = 0; s < n_samples; ++s) {
        Rng chain = rng.substream("chain", static_cast<std::uint64_t>(s));
        Tensor x = Tensor::zeros({n, L});
        for (std::size_t i = 0; i < x.size(); ++i)
            if (gen[i] != 0.0) x[i] = chain.normal();
        for (int t = sched.T; t >= 1; --t) {
            Tensor eps_hat = model(x, t);
            Tensor noise = Tensor::zeros({n, L});
            if (t > 1)
                for (std::size_t i = 0; i < noise.size(); ++i)
                    if (gen[i] != 0.0) noise[i] = chain.normal();
            Tensor next = reverse_step(x, eps_hat, t, sched, noise);
            for (std::size_t i = 0; i < x.size(); ++i)
                if (gen[i] != 0.0) x[i] = next[i];
        }
        Tensor sample = w.values;
        for (std::size_t i = 0; i < sample.size(); ++i)
            if (plan.cond[i] == 0.0) sample[i] = x[i];
        res.samples.push_back(std::move(sample));
    }

    res.median = Tensor::zeros({n, L});
    res.q05 = Tensor::zeros({n, L});
    res.q95 = Tensor::zeros({n, L});
    std::vector<double> cell(static_cast<std::size_t>(n_samples));
    for (std::size_t i = 0; i < res.median.size(); ++i) {
        for (int s = 0; s < n_samples; ++s)
            cell[static_cast<std::size_t>(s)] = res.samples[static_cast<std::size_t>(s)][i];
        res.q05[i] = detail::sorted_quantile(cell, 0.05);
        res.median[i] = detail::sorted_quantile(cell, 0.5);
        res.q95[i] = detail::sorted_quantile(cell, 0.95);
    }
    return res;
}

}  // namespace stimpute
