#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stimpute/autodiff.hpp"
#include "stimpute/data.hpp"
#include "stimpute/rng.hpp"

namespace stimpute {

struct ModelConfig {
    int d = 64;                 // channel width
    int heads = 8;
    int layers = 4;             // stacked noise-estimation layers
    int virtual_nodes = 16;     // key/value compression along the node axis
    int step_embed_width = 128;
    int time_encode_width = 128;
    int node_embed_width = 16;
    int mpnn_order = 2;         // highest transition-matrix power
    int adaptive_width = 10;    // learned adjacency embedding width
    bool zero_init_head = true; // start with a zero noise estimate

    void validate() const {
        if (d <= 0 || heads <= 0 || layers <= 0 || virtual_nodes <= 0 || mpnn_order < 0 ||
            adaptive_width <= 0 || step_embed_width <= 0 || time_encode_width <= 0 ||
            node_embed_width <= 0)
            throw std::invalid_argument("model config values must be positive");
        if (d % heads != 0) throw std::invalid_argument("channel width must divide by heads");
        if (step_embed_width % 2 != 0 || time_encode_width % 2 != 0)
            throw std::invalid_argument("encoding widths must be even");
    }
};

/// Row-normalized transition matrices in both edge directions.
struct Supports {
    Tensor fwd;  // D^-1 A
    Tensor bwd;  // D^-1 A^T
};

inline Supports build_supports(const Adjacency& adj) {
    const int n = adj.weights.dim(0);
    Supports s;
    s.fwd = Tensor::zeros({n, n});
    s.bwd = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i) {
        double rf = 0.0, rb = 0.0;
        for (int j = 0; j < n; ++j) {
            rf += adj.weights(i, j);
            rb += adj.weights(j, i);
        }
        for (int j = 0; j < n; ++j) {
            if (rf > 0.0) s.fwd(i, j) = adj.weights(i, j) / rf;
            if (rb > 0.0) s.bwd(i, j) = adj.weights(j, i) / rb;
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// fixed encodings

/// Position encoding over window steps: interleaved sin/cos with geometric
/// wavelengths up to 10000.
inline Tensor time_encoding(int L, int width) {
    Tensor out({L, width});
    for (int l = 0; l < L; ++l)
        for (int i = 0; i < width / 2; ++i) {
            const double rate = std::pow(10000.0, -2.0 * i / width);
            out(l, 2 * i) = std::sin(l * rate);
            out(l, 2 * i + 1) = std::cos(l * rate);
        }
    return out;
}

/// Diffusion-step encoding: sin/cos ladder over four decades of frequency.
inline Tensor step_embedding_table(int T, int width) {
    const int half = width / 2;
    Tensor out({T, width});
    for (int t = 1; t <= T; ++t)
        for (int j = 0; j < half; ++j) {
            const double arg = t * std::pow(10.0, j * 4.0 / (half - 1));
            out(t - 1, j) = std::sin(arg);
            out(t - 1, half + j) = std::cos(arg);
        }
    return out;
}

// ---------------------------------------------------------------------------
// parameter registration

namespace model_detail {

inline Tensor uniform_init(const std::vector<int>& dims, double bound, Rng& rng) {
    Tensor t(dims);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

}  // namespace model_detail

/// Registers every learnable tensor under a stable name. Linear weights use
/// uniform fan-in initialization, biases start at zero, normalization at
/// identity; the final head convolution starts at zero unless disabled.
inline ParamStore init_params(const ModelConfig& cfg, int n_nodes, std::uint64_t seed) {
    cfg.validate();
    const int d = cfg.d, K = cfg.mpnn_order;
    Rng rng = Rng(seed).substream("init");
    ParamStore ps;
    auto lin = [&](const std::string& name, int out, int in) {
        ps.add(name + ".w", model_detail::uniform_init({out, in}, 1.0 / std::sqrt(double(in)), rng));
        ps.add(name + ".b", Tensor::zeros({out}));
    };
    auto attn = [&](const std::string& prefix) {
        const double b = 1.0 / std::sqrt(double(d));
        ps.add(prefix + ".q", model_detail::uniform_init({d, d}, b, rng));
        ps.add(prefix + ".k", model_detail::uniform_init({d, d}, b, rng));
        ps.add(prefix + ".v", model_detail::uniform_init({d, d}, b, rng));
    };
    auto norm = [&](const std::string& prefix) {
        ps.add(prefix + ".g", Tensor::full({d}, 1.0));
        ps.add(prefix + ".b", Tensor::zeros({d}));
    };
    auto mpnn = [&](const std::string& prefix) {
        const double b = 1.0 / std::sqrt(double(d));
        for (const char* sup : {"fwd", "bwd", "adp"})
            for (int p = 0; p <= K; ++p)
                ps.add(prefix + ".w_" + sup + std::to_string(p),
                       model_detail::uniform_init({d, d}, b, rng));
        ps.add(prefix + ".b", Tensor::zeros({d}));
    };
    auto mlp = [&](const std::string& prefix, int in) {
        lin(prefix + ".fc1", d, in);
        lin(prefix + ".fc2", d, d);
    };

    lin("lift_cond", d, 1);
    lin("lift_in", d, 2);
    ps.add("aux.node_embed",
           model_detail::uniform_init({n_nodes, cfg.node_embed_width},
                                      1.0 / std::sqrt(double(cfg.node_embed_width)), rng));
    mlp("aux", cfg.time_encode_width + cfg.node_embed_width);
    const double be = 1.0 / std::sqrt(double(cfg.adaptive_width));
    ps.add("adaptive.e1", model_detail::uniform_init({n_nodes, cfg.adaptive_width}, be, rng));
    ps.add("adaptive.e2", model_detail::uniform_init({n_nodes, cfg.adaptive_width}, be, rng));
    lin("step.fc1", cfg.step_embed_width, cfg.step_embed_width);
    lin("step.fc2", d, cfg.step_embed_width);

    attn("prior.tem");
    attn("prior.spa");
    mpnn("prior.mpnn");
    norm("prior.ln_ta");
    norm("prior.ln_sa");
    norm("prior.ln_mp");
    mlp("prior.mlp", d);

    for (int i = 0; i < cfg.layers; ++i) {
        const std::string L = "layer" + std::to_string(i);
        attn(L + ".tem");
        attn(L + ".spa");
        const double bp = 1.0 / std::sqrt(double(n_nodes));
        ps.add(L + ".spa.pk",
               model_detail::uniform_init({cfg.virtual_nodes, n_nodes}, bp, rng));
        ps.add(L + ".spa.pv",
               model_detail::uniform_init({cfg.virtual_nodes, n_nodes}, bp, rng));
        mpnn(L + ".mpnn");
        norm(L + ".ln_sa");
        norm(L + ".ln_mp");
        mlp(L + ".mlp", d);
        lin(L + ".gate.f", d, d);
        lin(L + ".gate.g", d, d);
        lin(L + ".res", d, d);
        lin(L + ".skip", d, d);
    }

    lin("head.fc1", d, d);
    lin("head.fc2", 1, d);
    if (cfg.zero_init_head) ps.at("head.fc2.w").value.fill(0.0);
    return ps;
}

/// Closed-form size of the registry above; node-dependent terms are the node
/// embedding, the adjacency embeddings and the per-layer node projections.
inline std::size_t expected_param_count(const ModelConfig& cfg, int n_nodes) {
    const std::size_t d = static_cast<std::size_t>(cfg.d);
    const std::size_t N = static_cast<std::size_t>(n_nodes);
    const std::size_t K = static_cast<std::size_t>(cfg.mpnn_order);
    const std::size_t sw = static_cast<std::size_t>(cfg.step_embed_width);
    const std::size_t mpnn = 3 * (K + 1) * d * d + d;
    const std::size_t mlp = 2 * (d * d + d);
    std::size_t c = 0;
    c += d + d;          // lift_cond
    c += 2 * d + d;      // lift_in
    c += N * static_cast<std::size_t>(cfg.node_embed_width);
    c += d * static_cast<std::size_t>(cfg.time_encode_width + cfg.node_embed_width) + d;  // aux.fc1
    c += d * d + d;      // aux.fc2
    c += 2 * N * static_cast<std::size_t>(cfg.adaptive_width);
    c += sw * sw + sw;   // step.fc1
    c += d * sw + d;     // step.fc2
    c += 3 * d * d + 3 * d * d + mpnn + 6 * d + mlp;  // prior module
    c += static_cast<std::size_t>(cfg.layers) *
         (6 * d * d + 2 * static_cast<std::size_t>(cfg.virtual_nodes) * N + mpnn + 4 * d + mlp +
          3 * (d * d + d) + (d * d + d));  // gate f/g + res + skip
    c += d * d + d + d + 1;  // head
    return c;
}

// ---------------------------------------------------------------------------
// graph builders

namespace model_detail {

inline Var P(Tape& t, ParamStore& ps, const std::string& name) { return t.param(ps.at(name)); }

inline Var mlp2(Tape& t, ParamStore& ps, const std::string& prefix, Var x) {
    Var h = gelu(add_bias(linear(x, P(t, ps, prefix + ".fc1.w")), P(t, ps, prefix + ".fc1.b")));
    return add_bias(linear(h, P(t, ps, prefix + ".fc2.w")), P(t, ps, prefix + ".fc2.b"));
}

/// Norm(component + input) with the given normalization parameters.
inline Var phi(Tape& t, ParamStore& ps, const std::string& ln, Var component, Var input) {
    return layernorm_last(add(component, input), P(t, ps, ln + ".g"), P(t, ps, ln + ".b"));
}

/// Multi-head attention along the time axis, one sequence per node.
inline Var attn_time(Tape& t, ParamStore& ps, const std::string& prefix, Var q_src, Var k_src,
                     Var v_src, int heads) {
    const int d = t.val(q_src).dim(2);
    const double sc = 1.0 / std::sqrt(double(d) / heads);
    Var q = linear(q_src, P(t, ps, prefix + ".q"));
    Var k = linear(k_src, P(t, ps, prefix + ".k"));
    Var v = linear(v_src, P(t, ps, prefix + ".v"));
    return attn_apply(softmax_last(attn_scores(q, k, heads, sc)), v);
}

/// Multi-head attention along the node axis, one sequence per time step.
inline Var attn_space_full(Tape& t, ParamStore& ps, const std::string& prefix, Var q_src,
                           Var k_src, Var v_src, int heads) {
    const int d = t.val(q_src).dim(2);
    const double sc = 1.0 / std::sqrt(double(d) / heads);
    Var q = transpose01(linear(q_src, P(t, ps, prefix + ".q")));
    Var k = transpose01(linear(k_src, P(t, ps, prefix + ".k")));
    Var v = transpose01(linear(v_src, P(t, ps, prefix + ".v")));
    return transpose01(attn_apply(softmax_last(attn_scores(q, k, heads, sc)), v));
}

/// Node-axis attention with keys/values first compressed to the virtual
/// nodes by learned projections, then channel-mapped as usual.
inline Var attn_space_virtual(Tape& t, ParamStore& ps, const std::string& prefix, Var q_src,
                              Var v_src, int heads) {
    const int d = t.val(q_src).dim(2);
    const double sc = 1.0 / std::sqrt(double(d) / heads);
    Var pk = P(t, ps, prefix + ".pk");
    Var pv = P(t, ps, prefix + ".pv");
    Var q = transpose01(linear(q_src, P(t, ps, prefix + ".q")));
    Var k = transpose01(linear(node_mix(pk, q_src), P(t, ps, prefix + ".k")));
    Var v = transpose01(linear(node_mix(pv, v_src), P(t, ps, prefix + ".v")));
    return transpose01(attn_apply(softmax_last(attn_scores(q, k, heads, sc)), v));
}

/// Diffusion graph convolution: sum of channel-mapped transition-matrix powers
/// of both distance-based directions plus the learned adjacency.
inline Var mpnn_apply(Tape& t, ParamStore& ps, const std::string& prefix, Var h,
                      const Supports& sup, Var adaptive, int order) {
    Var acc{};
    bool first = true;
    auto accumulate = [&](Var term) {
        acc = first ? term : add(acc, term);
        first = false;
    };
    for (const char* name : {"fwd", "bwd", "adp"}) {
        const bool is_adaptive = name[0] == 'a';
        Var cur = h;
        for (int p = 0; p <= order; ++p) {
            if (p > 0) {
                if (is_adaptive)
                    cur = node_mix(adaptive, cur);
                else
                    cur = node_mix_const(name[0] == 'f' ? sup.fwd : sup.bwd, cur);
            }
            accumulate(linear(cur, P(t, ps, prefix + ".w_" + name + std::to_string(p))));
        }
    }
    return add_bias(acc, P(t, ps, prefix + ".b"));
}

}  // namespace model_detail

/// softmax(relu(E1 E2^T)): learned, row-stochastic transition matrix.
inline Var adaptive_adjacency(Tape& t, ParamStore& ps) {
    return softmax_last(relu(matmul_nt(model_detail::P(t, ps, "adaptive.e1"),
                                       model_detail::P(t, ps, "adaptive.e2"))));
}

/// Expanded time and node encodings, concatenated and mapped to width d.
inline Var build_aux(Tape& t, ParamStore& ps, const ModelConfig& cfg, int n, int L) {
    Var u_tem = expand_axis0(t.constant(time_encoding(L, cfg.time_encode_width)), n);
    Var u_spa = expand_axis1(model_detail::P(t, ps, "aux.node_embed"), L);
    return model_detail::mlp2(t, ps, "aux", concat_last(u_tem, u_spa));
}

/// Sinusoidal step encoding through two projections with smooth activations.
inline Var embed_step(Tape& t, ParamStore& ps, const ModelConfig& cfg, int step, int T) {
    if (step < 1 || step > T) throw std::invalid_argument("diffusion step out of range");
    Tensor table = step_embedding_table(T, cfg.step_embed_width);
    Tensor row({1, cfg.step_embed_width});
    for (int j = 0; j < cfg.step_embed_width; ++j) row(0, j) = table(step - 1, j);
    Var e = t.constant(row);
    using model_detail::P;
    e = silu(add_bias(linear(e, P(t, ps, "step.fc1.w")), P(t, ps, "step.fc1.b")));
    e = silu(add_bias(linear(e, P(t, ps, "step.fc2.w")), P(t, ps, "step.fc2.b")));
    return reshape(e, {cfg.d});
}

/// Conditioning prior: wide single-layer fusion of temporal attention, spatial
/// attention and message passing over the lifted interpolation.
inline Var extract_prior(Tape& t, ParamStore& ps, const ModelConfig& cfg, Var h,
                         const Supports& sup, Var adaptive) {
    using namespace model_detail;
    Var ta = attn_time(t, ps, "prior.tem", h, h, h, cfg.heads);
    Var sa = attn_space_full(t, ps, "prior.spa", h, h, h, cfg.heads);
    Var mp = mpnn_apply(t, ps, "prior.mpnn", h, sup, adaptive, cfg.mpnn_order);
    Var fused = add(add(phi(t, ps, "prior.ln_sa", sa, h), phi(t, ps, "prior.ln_ta", ta, h)),
                    phi(t, ps, "prior.ln_mp", mp, h));
    return mlp2(t, ps, "prior.mlp", fused);
}

/// One noise-estimation layer. Queries/keys of both attentions come from the
/// prior; the evolving features supply the values. Returns residual and skip.
inline std::pair<Var, Var> noise_layer(Tape& t, ParamStore& ps, const ModelConfig& cfg, int idx,
                                       Var h, Var h_pri, Var u, Var emb, Var adaptive,
                                       const Supports& sup) {
    using namespace model_detail;
    const std::string L = "layer" + std::to_string(idx);
    Var x = add_bias(add(h, u), emb);
    Var h_tem = attn_time(t, ps, L + ".tem", h_pri, h_pri, x, cfg.heads);
    Var sa = attn_space_virtual(t, ps, L + ".spa", h_pri, h_tem, cfg.heads);
    Var mp = mpnn_apply(t, ps, L + ".mpnn", h_tem, sup, adaptive, cfg.mpnn_order);
    Var h_spa = mlp2(t, ps, L + ".mlp",
                     add(phi(t, ps, L + ".ln_sa", sa, h_tem), phi(t, ps, L + ".ln_mp", mp, h_tem)));
    Var g = hadamard(
        tanh_op(add_bias(linear(h_spa, P(t, ps, L + ".gate.f.w")), P(t, ps, L + ".gate.f.b"))),
        sigmoid(add_bias(linear(h_spa, P(t, ps, L + ".gate.g.w")), P(t, ps, L + ".gate.g.b"))));
    Var res = scale(add(h, add_bias(linear(g, P(t, ps, L + ".res.w")), P(t, ps, L + ".res.b"))),
                    1.0 / std::numbers::sqrt2);
    Var skip = add_bias(linear(g, P(t, ps, L + ".skip.w")), P(t, ps, L + ".skip.b"));
    return {res, skip};
}

/// Layer stack plus output head over the summed skips.
inline Var noise_stack(Tape& t, ParamStore& ps, const ModelConfig& cfg, Var h_in, Var h_pri,
                       Var u, Var emb, Var adaptive, const Supports& sup) {
    using model_detail::P;
    const int n = t.val(h_in).dim(0), L = t.val(h_in).dim(1);
    Var h = h_in;
    Var skips{};
    for (int i = 0; i < cfg.layers; ++i) {
        auto [res, skip] = noise_layer(t, ps, cfg, i, h, h_pri, u, emb, adaptive, sup);
        h = res;
        skips = i == 0 ? skip : add(skips, skip);
    }
    Var y = silu(add_bias(linear(skips, P(t, ps, "head.fc1.w")), P(t, ps, "head.fc1.b")));
    y = add_bias(linear(y, P(t, ps, "head.fc2.w")), P(t, ps, "head.fc2.b"));
    return reshape(y, {n, L});
}

/// Full computation graph from the two input grids to the noise estimate.
inline Var predict_noise_graph(Tape& t, ParamStore& ps, const ModelConfig& cfg,
                               const Tensor& x_cond, const Tensor& x_noisy, const Supports& sup,
                               int step, int T) {
    using model_detail::P;
    const int n = x_cond.dim(0), L = x_cond.dim(1);
    if (!x_cond.same_shape(x_noisy)) throw std::invalid_argument("input grid shape mismatch");
    if (sup.fwd.dim(0) != n) throw std::invalid_argument("adjacency does not match node count");
    Var adaptive = adaptive_adjacency(t, ps);
    Var u = build_aux(t, ps, cfg, n, L);
    Var cond1 = t.constant(x_cond.reshaped({n, L, 1}));
    Var lifted = add_bias(linear(cond1, P(t, ps, "lift_cond.w")), P(t, ps, "lift_cond.b"));
    Var h_pri = extract_prior(t, ps, cfg, add(lifted, u), sup, adaptive);
    Var emb = embed_step(t, ps, cfg, step, T);
    Var noisy1 = t.constant(x_noisy.reshaped({n, L, 1}));
    Var h_in = add_bias(linear(concat_last(cond1, noisy1), P(t, ps, "lift_in.w")),
                        P(t, ps, "lift_in.b"));
    return noise_stack(t, ps, cfg, h_in, h_pri, u, emb, adaptive, sup);
}

/// Value-only forward pass.
inline Tensor predict_noise(ParamStore& ps, const ModelConfig& cfg, const Tensor& x_cond,
                            const Tensor& x_noisy, const Supports& sup, int step, int T) {
    Tape t(false);
    return t.val(predict_noise_graph(t, ps, cfg, x_cond, x_noisy, sup, step, T));
}

// ---------------------------------------------------------------------------
// sampling-time reuse

/// Everything that depends only on the conditioning, not on the noisy state:
/// computed once per window, reused across all samples and steps.
struct PriorCache {
    Tensor x_cond;
    Tensor u;
    Tensor h_pri;
    Tensor adaptive;
    std::vector<Tensor> emb;  // index t-1
};

inline PriorCache build_prior_cache(ParamStore& ps, const ModelConfig& cfg, const Tensor& x_cond,
                                    const Supports& sup, int T) {
    using model_detail::P;
    const int n = x_cond.dim(0), L = x_cond.dim(1);
    Tape t(false);
    Var adaptive = adaptive_adjacency(t, ps);
    Var u = build_aux(t, ps, cfg, n, L);
    Var cond1 = t.constant(x_cond.reshaped({n, L, 1}));
    Var lifted = add_bias(linear(cond1, P(t, ps, "lift_cond.w")), P(t, ps, "lift_cond.b"));
    Var h_pri = extract_prior(t, ps, cfg, add(lifted, u), sup, adaptive);
    PriorCache c;
    c.x_cond = x_cond;
    c.u = t.val(u);
    c.h_pri = t.val(h_pri);
    c.adaptive = t.val(adaptive);
    for (int s = 1; s <= T; ++s) c.emb.push_back(t.val(embed_step(t, ps, cfg, s, T)));
    return c;
}

inline Tensor predict_noise_cached(ParamStore& ps, const ModelConfig& cfg, const PriorCache& c,
                                   const Supports& sup, const Tensor& x_noisy, int step) {
    using model_detail::P;
    const int n = c.x_cond.dim(0), L = c.x_cond.dim(1);
    Tape t(false);
    Var cond1 = t.constant(c.x_cond.reshaped({n, L, 1}));
    Var noisy1 = t.constant(x_noisy.reshaped({n, L, 1}));
    Var h_in = add_bias(linear(concat_last(cond1, noisy1), P(t, ps, "lift_in.w")),
                        P(t, ps, "lift_in.b"));
    Var out = noise_stack(t, ps, cfg, h_in, t.constant(c.h_pri), t.constant(c.u),
                          t.constant(c.emb[static_cast<std::size_t>(step - 1)]),
                          t.constant(c.adaptive), sup);
    return t.val(out);
}

}  // namespace stimpute
