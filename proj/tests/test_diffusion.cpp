#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "stimpute/conditioning.hpp"
#include "stimpute/diffusion.hpp"
#include "stimpute/masking.hpp"
#include "stimpute/rng.hpp"

using namespace stimpute;

namespace {

/// Independent coding of the quadratic schedule value, grouped differently.
double beta_formula(int T, int t, double beta1, double betaT) {
    const double num = (T - t) * std::sqrt(beta1) + (t - 1) * std::sqrt(betaT);
    return (num * num) / (static_cast<double>(T - 1) * static_cast<double>(T - 1));
}

Tensor random_matrix(int n, int l, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t({n, l});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("schedule values, monotonicity and endpoints") {
    const int T = 50;
    DiffusionSchedule s = build_schedule(T, 1e-4, 0.2);
    REQUIRE(s.T == T);
    CHECK(s.beta_at(1) == 1e-4);
    CHECK(s.beta_at(T) == 0.2);
    for (int t = 1; t <= T; ++t)
        CHECK_THAT(s.beta_at(t), Catch::Matchers::WithinAbs(beta_formula(T, t, 1e-4, 0.2), 1e-12));
    for (int t = 2; t <= T; ++t) {
        CHECK(s.beta_at(t) > s.beta_at(t - 1));       // strictly increasing
        CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));  // strictly decreasing
    }
    for (int t = 1; t <= T; ++t) {
        CHECK(s.alpha_bar_at(t) > 0.0);
        CHECK(s.alpha_bar_at(t) < 1.0);
        CHECK(s.alpha_at(t) == 1.0 - s.beta_at(t));
    }
    CHECK(s.sigma2_at(1) == 0.0);
    for (int t = 2; t <= T; ++t)
        CHECK_THAT(s.sigma2_at(t),
                   Catch::Matchers::WithinAbs((1.0 - s.alpha_bar_at(t - 1)) /
                                                  (1.0 - s.alpha_bar_at(t)) * s.beta_at(t),
                                              1e-15));

    CHECK_THROWS(build_schedule(1, 1e-4, 0.2));
    CHECK_THROWS(build_schedule(50, 0.2, 1e-4));
    CHECK_THROWS(build_schedule(50, 0.0, 0.2));
}

TEST_CASE("forward sample closed forms") {
    DiffusionSchedule s = build_schedule(50, 1e-4, 0.2);
    Rng rng(21);
    Tensor x0 = random_matrix(3, 4, rng);
    Tensor zero = Tensor::zeros({3, 4});
    for (int t : {1, 25, 50}) {
        Tensor out = forward_sample(x0, t, zero, s);
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK_THAT(out[i],
                       Catch::Matchers::WithinAbs(std::sqrt(s.alpha_bar_at(t)) * x0[i], 1e-15));
    }

    // hand-built schedule entry with alpha_bar = 0.25
    DiffusionSchedule custom;
    custom.T = 1;
    custom.beta = {0.5};
    custom.alpha = {0.5};
    custom.alpha_bar = {0.25};
    custom.sigma2 = {0.0};
    Tensor ones = Tensor::full({2, 2}, 1.0);
    Tensor out = forward_sample(ones, 1, ones, custom);
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK_THAT(out[i], Catch::Matchers::WithinAbs(0.5 + std::sqrt(0.75), 1e-15));

    CHECK_THROWS(forward_sample(x0, 0, zero, s));
    CHECK_THROWS(forward_sample(x0, 51, zero, s));
}

TEST_CASE("forward sample is linear in its inputs") {
    DiffusionSchedule s = build_schedule(50, 1e-4, 0.2);
    Rng rng(22);
    Tensor x0 = random_matrix(4, 5, rng), eps = random_matrix(4, 5, rng);
    Tensor x0b = random_matrix(4, 5, rng), epsb = random_matrix(4, 5, rng);
    const int t = 17;
    Tensor lhs = forward_sample(x0, t, eps, s);
    Tensor rhsb = forward_sample(x0b, t, epsb, s);
    Tensor sum_in = x0;
    sum_in.vec() += x0b.vec();
    Tensor sum_eps = eps;
    sum_eps.vec() += epsb.vec();
    Tensor both = forward_sample(sum_in, t, sum_eps, s);
    for (std::size_t i = 0; i < both.size(); ++i)
        CHECK_THAT(both[i], Catch::Matchers::WithinAbs(lhs[i] + rhsb[i], 1e-12));
}

TEST_CASE("forward process variance matches 1 - alpha_bar") {
    DiffusionSchedule s = build_schedule(50, 1e-4, 0.2);
    Rng rng(23);
    Tensor x0 = Tensor::zeros({1, 1});
    const int n = 100000;
    for (int t : {1, 25, 50}) {
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < n; ++i) {
            Tensor eps({1, 1});
            eps[0] = rng.normal();
            const double v = forward_sample(x0, t, eps, s)[0];
            sum += v;
            sumsq += v * v;
        }
        const double mean = sum / n;
        const double var = sumsq / n - mean * mean;
        const double want = 1.0 - s.alpha_bar_at(t);
        const double se = want * std::sqrt(2.0 / (n - 1));
        INFO("t=" << t << " var=" << var << " want=" << want);
        CHECK(std::abs(var - want) < 3.0 * se);
    }
}

TEST_CASE("exact-noise inversion at the final denoising step") {
    DiffusionSchedule s = build_schedule(50, 1e-4, 0.2);
    Rng rng(24);
    Tensor zero = Tensor::zeros({3, 5});
    for (int trial = 0; trial < 100; ++trial) {
        Tensor x0 = random_matrix(3, 5, rng);
        Tensor eps = random_matrix(3, 5, rng);
        Tensor x1 = forward_sample(x0, 1, eps, s);
        Tensor rec = reverse_step(x1, eps, 1, s, zero);
        for (std::size_t i = 0; i < rec.size(); ++i)
            CHECK_THAT(rec[i], Catch::Matchers::WithinAbs(x0[i], 1e-6));
    }
}

TEST_CASE("reverse step small-noise limit") {
    // schedule with tiny first beta: with eps_hat = 0 the mean is xt/sqrt(alpha)
    DiffusionSchedule s = build_schedule(50, 1e-10, 0.2);
    Rng rng(25);
    Tensor xt = random_matrix(2, 3, rng);
    Tensor rec = reverse_step(xt, Tensor::zeros({2, 3}), 1, s, Tensor::zeros({2, 3}));
    for (std::size_t i = 0; i < rec.size(); ++i)
        CHECK_THAT(rec[i], Catch::Matchers::WithinAbs(xt[i], 1e-8));
}

TEST_CASE("one-step denoised mean matches the closed-form posterior mean") {
    DiffusionSchedule s = build_schedule(50, 1e-4, 0.2);
    Rng rng(26);
    for (int trial = 0; trial < 50; ++trial) {
        const int t = static_cast<int>(rng.uniform_int(1, 50));
        Tensor x0 = random_matrix(2, 4, rng);
        Tensor eps = random_matrix(2, 4, rng);
        Tensor xt = forward_sample(x0, t, eps, s);
        Tensor got = reverse_step(xt, eps, t, s, Tensor::zeros({2, 4}));
        // independent algebra: mu = sqrt(abar_{t-1}) x0
        //                        + sqrt(alpha_t) (1 - abar_{t-1}) / sqrt(1 - abar_t) eps
        const double ab_prev = t == 1 ? 1.0 : s.alpha_bar_at(t - 1);
        const double c0 = std::sqrt(ab_prev);
        const double c1 =
            std::sqrt(s.alpha_at(t)) * (1.0 - ab_prev) / std::sqrt(1.0 - s.alpha_bar_at(t));
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK_THAT(got[i], Catch::Matchers::WithinAbs(c0 * x0[i] + c1 * eps[i], 1e-10));
    }
}

TEST_CASE("training loss masking contract") {
    Rng rng(27);
    Tensor eps = random_matrix(4, 6, rng);
    Tensor mask = Tensor::zeros({4, 6});
    mask(1, 2) = 1.0;
    mask(3, 5) = 1.0;

    CHECK(training_loss(eps, eps, mask) == 0.0);

    Tensor pred = eps;
    pred(1, 2) += 2.0;  // residual 2 at one target cell
    Tensor single = Tensor::zeros({4, 6});
    single(1, 2) = 1.0;
    CHECK_THAT(training_loss(eps, pred, single), Catch::Matchers::WithinAbs(4.0, 1e-15));

    // perturbation off the target leaves the value bit-identical
    const double base = training_loss(eps, pred, mask);
    Tensor pred2 = pred;
    pred2(0, 0) += 100.0;
    pred2(2, 3) -= 7.0;
    CHECK(training_loss(eps, pred2, mask) == base);

    CHECK(training_loss(eps, pred, Tensor::zeros({4, 6})) == 0.0);
}

TEST_CASE("sampling: ensemble statistics, conditioning passthrough, determinism") {
    DiffusionSchedule s = build_schedule(20, 1e-4, 0.2);
    Rng mk(28);
    Window w;
    w.values = random_matrix(4, 6, mk);
    w.observed = Tensor::full({4, 6}, 1.0);
    for (int i = 0; i < 4; ++i) w.node_ids.push_back("n");
    for (int l = 0; l < 6; ++l) w.timestamps.push_back(300LL * l);
    Rng prng(29);
    MaskPlan plan = point_mask_fraction(w, prng, 40.0);

    // model-free denoiser: always predicts zero noise
    DenoiseFn zero_model = [](const Tensor& x, int) { return Tensor::zeros_like(x); };

    Rng r1(30);
    ImputationResult res = sample_imputation(w, plan, zero_model, s, 25, r1);
    REQUIRE(res.samples.size() == 25);

    // conditioning cells pass through verbatim in every sample and summary
    for (std::size_t i = 0; i < plan.cond.size(); ++i)
        if (plan.cond[i] == 1.0) {
            for (const auto& sample : res.samples) CHECK(sample[i] == w.values[i]);
            CHECK(res.median[i] == w.values[i]);
        }

    // per-cell median against an independent sort-based median
    for (std::size_t i = 0; i < res.median.size(); ++i) {
        std::vector<double> cell;
        for (const auto& sample : res.samples) cell.push_back(sample[i]);
        std::sort(cell.begin(), cell.end());
        const double med = cell[12];  // odd count: middle order statistic
        CHECK_THAT(res.median[i], Catch::Matchers::WithinAbs(med, 1e-12));
        CHECK(res.q05[i] <= res.median[i]);
        CHECK(res.median[i] <= res.q95[i]);
    }

    // even ensemble: median averages the two central order statistics
    Rng r2(30);
    ImputationResult even = sample_imputation(w, plan, zero_model, s, 4, r2);
    for (std::size_t i = 0; i < even.median.size(); ++i) {
        std::vector<double> cell;
        for (const auto& sample : even.samples) cell.push_back(sample[i]);
        std::sort(cell.begin(), cell.end());
        CHECK_THAT(even.median[i], Catch::Matchers::WithinAbs(0.5 * (cell[1] + cell[2]), 1e-12));
    }

    // single sample: median is that sample
    Rng r3(31);
    ImputationResult one = sample_imputation(w, plan, zero_model, s, 1, r3);
    for (std::size_t i = 0; i < one.median.size(); ++i) CHECK(one.median[i] == one.samples[0][i]);

    // determinism under the same seed
    Rng r4(30);
    ImputationResult res2 = sample_imputation(w, plan, zero_model, s, 25, r4);
    for (std::size_t i = 0; i < res.median.size(); ++i) CHECK(res.median[i] == res2.median[i]);
}
