#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "stimpute/data.hpp"
#include "stimpute/rng.hpp"

namespace stimpute {

struct SyntheticSpec {
    int node_count = 20;
    int window_length = 24;
    int window_count = 200;  // consecutive windows cut from one long series
    int factors = 3;         // latent spatial factors
    double noise = 0.1;      // observation noise standard deviation
    std::uint64_t coord_seed = 11;
    std::uint64_t seed = 1;

    void validate() const {
        if (node_count <= 0 || window_length <= 0 || window_count <= 0 || factors <= 0)
            throw std::invalid_argument("synthetic spec counts must be positive");
        if (noise < 0.0) throw std::invalid_argument("synthetic noise level must be >= 0");
    }
};

struct SyntheticData {
    std::vector<Window> windows;  // complete observations, raw units
    Adjacency adjacency;
    Tensor ground_truth;  // N x (window_count * L), the full generated matrix
    std::vector<Coord> coords;
};

/// Sensors live in the unit square. Each latent factor is a sinusoid with its
/// own frequency/phase whose per-node loading decays smoothly with distance
/// from a random anchor, so nearby sensors stay strongly correlated. Factors
/// propagate as plane waves: a node's phase lags by wavenumber times its
/// position along the travel direction, the way fronts sweep a sensor field.
inline SyntheticData synthesize(const SyntheticSpec& spec) {
    spec.validate();
    const int n = spec.node_count, L = spec.window_length;
    const int total = spec.window_count * L;

    SyntheticData out;
    Rng crng(spec.coord_seed);
    for (int i = 0; i < n; ++i) {
        char id[16];
        std::snprintf(id, sizeof(id), "s%02d", i);
        out.coords.push_back({id, crng.uniform(), crng.uniform()});
    }

    Rng frng = Rng(spec.seed).substream("factors");
    const double rho = 0.3;  // spatial decay length of the loadings
    std::vector<double> omega, phase, amp;
    Tensor loading({n, spec.factors});
    Tensor lag({n, spec.factors});  // per-node phase lag along the wave direction
    for (int f = 0; f < spec.factors; ++f) {
        omega.push_back(frng.uniform(0.5, 3.0) * 2.0 * std::numbers::pi / L);
        phase.push_back(frng.uniform(0.0, 2.0 * std::numbers::pi));
        amp.push_back(frng.uniform(0.8, 1.2));
        const double ax = frng.uniform(), ay = frng.uniform();
        const double dir = frng.uniform(0.0, 2.0 * std::numbers::pi);
        const double wavenumber = frng.uniform(2.5, 4.5);  // radians per unit distance
        for (int i = 0; i < n; ++i) {
            const double dx = out.coords[static_cast<std::size_t>(i)].x - ax;
            const double dy = out.coords[static_cast<std::size_t>(i)].y - ay;
            loading(i, f) = std::exp(-(dx * dx + dy * dy) / (rho * rho));
            lag(i, f) = wavenumber * (std::cos(dir) * out.coords[static_cast<std::size_t>(i)].x +
                                      std::sin(dir) * out.coords[static_cast<std::size_t>(i)].y);
        }
    }

    Rng nrng = Rng(spec.seed).substream("noise");
    out.ground_truth = Tensor::zeros({n, total});
    for (int i = 0; i < n; ++i)
        for (int l = 0; l < total; ++l) {
            double v = 0.0;
            for (int f = 0; f < spec.factors; ++f)
                v += amp[static_cast<std::size_t>(f)] * loading(i, f) *
                     std::sin(omega[static_cast<std::size_t>(f)] * l +
                              phase[static_cast<std::size_t>(f)] - lag(i, f));
            if (spec.noise > 0.0) v += spec.noise * nrng.normal();
            out.ground_truth(i, l) = v;
        }

    out.adjacency = build_adjacency(out.coords, default_kernel_width(out.coords), 0.1);

    std::vector<std::string> ids;
    for (const auto& c : out.coords) ids.push_back(c.id);
    const long long t0 = 1577836800LL;  // 2020-01-01 00:00:00
    std::vector<long long> ts;
    for (int l = 0; l < total; ++l) ts.push_back(t0 + 300LL * l);  // 5-minute period
    Tensor ones = Tensor::full({n, total}, 1.0);
    out.windows = cut_windows(out.ground_truth, ones, ids, ts, 0, total, L, L);
    return out;
}

/// Writes the corpus in the same columnar format load_series reads.
inline void write_synthetic_csv(const SyntheticData& data, const std::string& series_path,
                                const std::string& coords_path) {
    std::ofstream cs(coords_path);
    if (!cs) throw std::runtime_error("cannot write " + coords_path);
    cs << "node_id,x,y\n";
    for (const auto& c : data.coords) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g\n", c.id.c_str(), c.x, c.y);
        cs << buf;
    }

    std::ofstream ss(series_path);
    if (!ss) throw std::runtime_error("cannot write " + series_path);
    ss << "timestamp";
    for (const auto& c : data.coords) ss << ',' << c.id;
    ss << '\n';
    const int n = data.ground_truth.dim(0);
    const int total = data.ground_truth.dim(1);
    long long t = data.windows.front().timestamps.front();
    for (int l = 0; l < total; ++l, t += 300) {
        ss << format_timestamp(t);
        for (int i = 0; i < n; ++i) {
            char buf[40];
            std::snprintf(buf, sizeof(buf), ",%.17g", data.ground_truth(i, l));
            ss << buf;
        }
        ss << '\n';
    }
}

}  // namespace stimpute
