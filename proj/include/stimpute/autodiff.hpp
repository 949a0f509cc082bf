#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stimpute/tensor.hpp"

namespace stimpute {

/// Named trainable tensor with gradient and Adam moment buffers.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;
    Tensor v;
};

/// Insertion-ordered parameter collection. Order is part of the checkpoint
/// contract, so parameters must be registered deterministically.
class ParamStore {
public:
    std::size_t add(const std::string& name, Tensor init) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        Param p;
        p.name = name;
        p.grad = Tensor::zeros_like(init);
        p.m = Tensor::zeros_like(init);
        p.v = Tensor::zeros_like(init);
        p.value = std::move(init);
        params_.push_back(std::move(p));
        index_[name] = params_.size() - 1;
        return params_.size() - 1;
    }

    Param& operator[](std::size_t i) { return params_[i]; }
    const Param& operator[](std::size_t i) const { return params_[i]; }

    Param& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
        return params_[it->second];
    }

    std::size_t size() const { return params_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.grad.fill(0.0);
    }

private:
    std::deque<Param> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
    Tape* tape = nullptr;
    int idx = -1;
};

/// Reverse-mode tape. Operations append nodes with value plus a backward
/// closure; backward() walks nodes in reverse creation order. A non-recording
/// tape computes values only, which keeps sampling loops cheap.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    Var constant(Tensor t) { return push(std::move(t), false, nullptr); }

    /// Gradient-requiring leaf that is not a model parameter (inputs under test).
    Var input(Tensor t) { return push(std::move(t), recording_, nullptr); }

    Var param(Param& p) {
        Var v = push(p.value, recording_, nullptr);
        if (nodes_[static_cast<std::size_t>(v.idx)].needs) {
            Param* pp = &p;
            int idx = v.idx;
            Tape* t = this;
            nodes_[static_cast<std::size_t>(v.idx)].back = [t, idx, pp] {
                pp->grad.vec() += t->nodes_[static_cast<std::size_t>(idx)].grad.vec();
            };
        }
        return v;
    }

    const Tensor& val(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].val; }
    Tensor& val(Var v) { return nodes_[static_cast<std::size_t>(v.idx)].val; }

    bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].needs; }

    bool has_grad(Var v) const {
        return !nodes_[static_cast<std::size_t>(v.idx)].grad.empty();
    }

    /// Gradient buffer of a node, allocated (zeroed) on first access.
    Tensor& grad(Var v) { return ensure_grad(v.idx); }
    const Tensor& cgrad(Var v) { return ensure_grad(v.idx); }

    void backward(Var scalar) {
        if (!recording_) throw std::logic_error("backward on a non-recording tape");
        if (val(scalar).size() != 1) throw std::invalid_argument("backward needs a scalar node");
        ensure_grad(scalar.idx)[0] = 1.0;
        for (int i = scalar.idx; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.back && !n.grad.empty()) n.back();
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

    // --- used by the free-function ops below ---
    Var push(Tensor val, bool needs, std::function<void()> back) {
        Node n;
        n.val = std::move(val);
        n.needs = needs && recording_;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    Tensor& ensure_grad(int idx) {
        Node& n = nodes_[static_cast<std::size_t>(idx)];
        if (n.grad.empty()) n.grad = Tensor::zeros_like(n.val);
        return n.grad;
    }

private:
    struct Node {
        Tensor val;
        Tensor grad;
        bool needs = false;
        std::function<void()> back;
    };

    std::deque<Node> nodes_;
    bool recording_;
};

namespace detail {

inline Tape& tape_of(Var a, Var b) {
    assert(a.tape && a.tape == b.tape);
    return *a.tape;
}

inline std::pair<int, int> rows_last(const Tensor& t) {
    const int c = t.dim(t.rank() - 1);
    return {static_cast<int>(t.size()) / c, c};
}

/// Registers an elementwise-style op: out already computed, dx = f(g) pushed back
/// through a per-input closure.
inline Var unary(Var x, Tensor out, std::function<void(const Tensor&, Tensor&)> pull) {
    Tape& t = *x.tape;
    bool needs = t.needs(x);
    std::function<void()> back;
    if (needs) {
        Var self{&t, static_cast<int>(t.node_count())};
        back = [&t, x, self, pull = std::move(pull)] {
            pull(t.grad(self), t.grad(x));
        };
    }
    return t.push(std::move(out), needs, std::move(back));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// arithmetic

inline Var add(Var a, Var b) {
    Tape& t = detail::tape_of(a, b);
    const Tensor& A = t.val(a);
    const Tensor& B = t.val(b);
    assert(A.same_shape(B));
    Tensor out = A;
    out.vec() += B.vec();
    bool needs = t.needs(a) || t.needs(b);
    std::function<void()> back;
    if (needs) {
        Var self{&t, static_cast<int>(t.node_count())};
        back = [&t, a, b, self] {
            const Tensor& g = t.grad(self);
            if (t.needs(a)) t.grad(a).vec() += g.vec();
            if (t.needs(b)) t.grad(b).vec() += g.vec();
        };
    }
    return t.push(std::move(out), needs, std::move(back));
}

inline Var sub(Var a, Var b) {
    Tape& t = detail::tape_of(a, b);
    const Tensor& A = t.val(a);
    const Tensor& B = t.val(b);
    assert(A.same_shape(B));
    Tensor out = A;
    out.vec() -= B.vec();
    bool needs = t.needs(a) || t.needs(b);
    std::function<void()> back;
    if (needs) {
        Var self{&t, static_cast<int>(t.node_count())};
        back = [&t, a, b, self] {
            const Tensor& g = t.grad(self);
            if (t.needs(a)) t.grad(a).vec() += g.vec();
            if (t.needs(b)) t.grad(b).vec() -= g.vec();
        };
    }
    return t.push(std::move(out), needs, std::move(back));
}

inline Var scale(Var x, double c) {
    Tape& t = *x.tape;
    Tensor out = t.val(x);
    out.vec() *= c;
    return detail::unary(x, std::move(out), [c](const Tensor& g, Tensor& gx) {
        gx.vec() += c * g.vec();
    });
}

inline Var hadamard(Var a, Var b) {
    Tape& t = detail::tape_of(a, b);
    const Tensor& A = t.val(a);
    const Tensor& B = t.val(b);
    assert(A.same_shape(B));
    Tensor out = A;
    out.vec().array() *= B.vec().array();
    bool needs = t.needs(a) || t.needs(b);
    std::function<void()> back;
    if (needs) {
        Var self{&t, static_cast<int>(t.node_count())};
        back = [&t, a, b, self] {
            const Tensor& g = t.grad(self);
            if (t.needs(a)) t.grad(a).vec().array() += g.vec().array() * t.val(b).vec().array();
            if (t.needs(b)) t.grad(b).vec().array() += g.vec().array() * t.val(a).vec().array();
        };
    }
    return t.push(std::move(out), needs, std::move(back));
}

/// Elementwise multiply by a fixed tensor (masks, schedule constants).
inline Var mul_const(Var x, Tensor c) {
    Tape& t = *x.tape;
    const Tensor& X = t.val(x);
    assert(X.same_shape(c));
    Tensor out = X;
    out.vec().array() *= c.vec().array();
    return detail::unary(x, std::move(out), [c = std::move(c)](const Tensor& g, Tensor& gx) {
        gx.vec().array() += g.vec().array() * c.vec().array();
    });
}

inline Var reshape(Var x, const std::vector<int>& dims) {
    Tape& t = *x.tape;
    Tensor out = t.val(x).reshaped(dims);
    return detail::unary(x, std::move(out), [](const Tensor& g, Tensor& gx) {
        gx.vec() += g.vec();
    });
}

// ---------------------------------------------------------------------------
// linear algebra

/// x (..., in) times W (out, in) -> (..., out).
inline Var linear(Var x, Var w) {
    Tape& t = detail::tape_of(x, w);
    const Tensor& X = t.val(x);
    const Tensor& W = t.val(w);
    assert(W.rank() == 2 && X.dim(X.rank() - 1) == W.dim(1));
    auto [rows, in] = detail::rows_last(X);
    const int out_c = W.dim(0);
    std::vector<int> oshape = X.shape();
    oshape.back() = out_c;
    Tensor out(oshape);
    out.mat(rows, out_c).noalias() = X.mat(rows, in) * W.mat(out_c, in).transpose();
    bool needs = t.needs(x) || t.needs(w);
    std::function<void()> back;
    if (needs) {
        Var self{&t, static_cast<int>(t.node_count())};
        back = [&t, x, w, self, rows, in, out_c] {
            CMapRM g = t.cgrad(self).mat(rows, out_c);
            if (t.needs(x))
                t.grad(x).mat(rows, in).noalias() += g * t.val(w).mat(out_c, in);
            if (t.needs(w))
                t.grad(w).mat(out_c, in).noalias() += g.transpose() * t.val(x).mat(rows, in);
        };
    }
    return t.push(std::move(out), needs, std::move(back));
}

/// Broadcast-add a length-C vector over the last axis.
inline Var add_bias(Var x, Var b) {
    Tape& t = detail::tape_of(x, b);
    const Tensor& X = t.val(x);
    const Tensor& B = t.val(b);
    assert(B.rank() == 1 && B.dim(0) == X.dim(X.rank() - 1));
    auto [rows, c] = detail::rows_last(X);
    Tensor out = X;
    out.mat(rows, c).rowwise() += B.vec().transpose();
    bool needs = t.needs(x) || t.needs(b);
    std::function<void()> back;
    if (needs) {
        Var self{&t, static_cast<int>(t.node_count())};
        back = [&t, x, b, self, rows, c] {
            CMapRM g = t.cgrad(self).mat(rows, c);
            if (t.needs(x)) t.grad(x).vec() += t.grad(self).vec();
            if (t.needs(b)) t.grad(b).vec() += g.colwise().sum().transpose();
        };
    }
    return t.push(std::move(out), needs, std::move(back));
}

/// A (n, k) times B (m, k)^T -> (n, m); used for the learned adjacency.
inline Var matmul_nt(Var a, Var b) {
    Tape& t = detail::tape_of(a, b);
    const Tensor& A = t.val(a);
    const Tensor& B = t.val(b);
    assert(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(1));
    const int n = A.dim(0), k = A.dim(1), m = B.dim(0);
    Tensor out({n, m});
    out.mat(n, m).noalias() = A.mat(n, k) * B.mat(m, k).transpose();
    bool needs = t.needs(a) || t.needs(b);
    std::function<void()> back;
    if (needs) {
        Var self{&t, static_cast<int>(t.node_count())};
        back = [&t, a, b, self, n, k, m] {
            CMapRM g = t.cgrad(self).mat(n, m);
            if (t.needs(a)) t.grad(a).mat(n, k).noalias() += g * t.val(b).mat(m, k);
            if (t.needs(b)) t.grad(b).mat(m, k).noalias() += g.transpose() * t.val(a).mat(n, k);
        };
    }
    return t.push(std::move(out), needs, std::move(back));
}

/// P (r, N) mixes the node axis of X (N, L, C) -> (r, L, C). Covers both graph
/// message passing (r = N) and the node-axis compression of keys/values.
inline Var node_mix(Var p, Var x) {
    Tape& t = detail::tape_of(p, x);
    const Tensor& P = t.val(p);
    const Tensor& X = t.val(x);
    assert(P.rank() == 2 && X.rank() == 3 && P.dim(1) == X.dim(0));
    const int r = P.dim(0), n = P.dim(1), lc = X.dim(1) * X.dim(2);
    Tensor out({r, X.dim(1), X.dim(2)});
    out.mat(r, lc).noalias() = P.mat(r, n) * X.mat(n, lc);
    bool needs = t.needs(p) || t.needs(x);
    std::function<void()> back;
    if (needs) {
        Var self{&t, static_cast<int>(t.node_count())};
        back = [&t, p, x, self, r, n, lc] {
            CMapRM g = t.cgrad(self).mat(r, lc);
            if (t.needs(p)) t.grad(p).mat(r, n).noalias() += g * t.val(x).mat(n, lc).transpose();
            if (t.needs(x)) t.grad(x).mat(n, lc).noalias() += t.val(p).mat(r, n).transpose() * g;
        };
    }
    return t.push(std::move(out), needs, std::move(back));
}

/// Same mixing with a fixed matrix (normalized adjacency supports).
inline Var node_mix_const(Tensor p, Var x) {
    Tape& t = *x.tape;
    const Tensor& X = t.val(x);
    assert(p.rank() == 2 && X.rank() == 3 && p.dim(1) == X.dim(0));
    const int r = p.dim(0), n = p.dim(1), lc = X.dim(1) * X.dim(2);
    Tensor out({r, X.dim(1), X.dim(2)});
    out.mat(r, lc).noalias() = p.mat(r, n) * X.mat(n, lc);
    return detail::unary(x, std::move(out),
                         [p = std::move(p), r, n, lc](const Tensor& g, Tensor& gx) {
                             gx.mat(n, lc).noalias() += p.mat(r, n).transpose() * g.mat(r, lc);
                         });
}

// ---------------------------------------------------------------------------
// shape manipulation

/// (A, B, C) -> (B, A, C); swaps node and time axes for attention.
inline Var transpose01(Var x) {
    Tape& t = *x.tape;
    const Tensor& X = t.val(x);
    assert(X.rank() == 3);
    const int a = X.dim(0), b = X.dim(1), c = X.dim(2);
    Tensor out({b, a, c});
    for (int i = 0; i < a; ++i)
        for (int j = 0; j < b; ++j)
            for (int k = 0; k < c; ++k) out(j, i, k) = X(i, j, k);
    return detail::unary(x, std::move(out), [a, b, c](const Tensor& g, Tensor& gx) {
        for (int i = 0; i < a; ++i)
            for (int j = 0; j < b; ++j)
                for (int k = 0; k < c; ++k) gx(i, j, k) += g(j, i, k);
    });
}

inline Var concat_last(Var a, Var b) {
    Tape& t = detail::tape_of(a, b);
    const Tensor& A = t.val(a);
    const Tensor& B = t.val(b);
    assert(A.rank() == B.rank());
    for (int i = 0; i + 1 < A.rank(); ++i) assert(A.dim(i) == B.dim(i));
    const int ca = A.dim(A.rank() - 1), cb = B.dim(B.rank() - 1);
    auto [rows, ca2] = detail::rows_last(A);
    (void)ca2;
    std::vector<int> oshape = A.shape();
    oshape.back() = ca + cb;
    Tensor out(oshape);
    out.mat(rows, ca + cb).leftCols(ca) = A.mat(rows, ca);
    out.mat(rows, ca + cb).rightCols(cb) = B.mat(rows, cb);
    bool needs = t.needs(a) || t.needs(b);
    std::function<void()> back;
    if (needs) {
        Var self{&t, static_cast<int>(t.node_count())};
        back = [&t, a, b, self, rows, ca, cb] {
            CMapRM g = t.cgrad(self).mat(rows, ca + cb);
            if (t.needs(a)) t.grad(a).mat(rows, ca) += g.leftCols(ca);
            if (t.needs(b)) t.grad(b).mat(rows, cb) += g.rightCols(cb);
        };
    }
    return t.push(std::move(out), needs, std::move(back));
}

/// (A, B) -> (N, A, B) by repetition.
inline Var expand_axis0(Var x, int n) {
    Tape& t = *x.tape;
    const Tensor& X = t.val(x);
    assert(X.rank() == 2);
    const int a = X.dim(0), b = X.dim(1);
    Tensor out({n, a, b});
    for (int i = 0; i < n; ++i)
        MapRM(out.data() + static_cast<std::size_t>(i) * a * b, a, b) = X.mat(a, b);
    return detail::unary(x, std::move(out), [n, a, b](const Tensor& g, Tensor& gx) {
        for (int i = 0; i < n; ++i)
            gx.mat(a, b) += CMapRM(g.data() + static_cast<std::size_t>(i) * a * b, a, b);
    });
}

/// (N, C) -> (N, L, C) by repeating each row L times.
inline Var expand_axis1(Var x, int l) {
    Tape& t = *x.tape;
    const Tensor& X = t.val(x);
    assert(X.rank() == 2);
    const int n = X.dim(0), c = X.dim(1);
    Tensor out({n, l, c});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < l; ++j)
            for (int k = 0; k < c; ++k) out(i, j, k) = X(i, k);
    return detail::unary(x, std::move(out), [n, l, c](const Tensor& g, Tensor& gx) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < l; ++j)
                for (int k = 0; k < c; ++k) gx(i, k) += g(i, j, k);
    });
}

// ---------------------------------------------------------------------------
// nonlinearities

inline Var relu(Var x) {
    Tape& t = *x.tape;
    Tensor out = t.val(x);
    Tensor mask = Tensor::zeros_like(out);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i] > 0.0)
            mask[i] = 1.0;
        else
            out[i] = 0.0;
    }
    return detail::unary(x, std::move(out), [mask = std::move(mask)](const Tensor& g, Tensor& gx) {
        gx.vec().array() += g.vec().array() * mask.vec().array();
    });
}

inline Var sigmoid(Var x) {
    Tape& t = *x.tape;
    Tensor out = t.val(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    Tensor y = out;
    return detail::unary(x, std::move(out), [y = std::move(y)](const Tensor& g, Tensor& gx) {
        gx.vec().array() += g.vec().array() * y.vec().array() * (1.0 - y.vec().array());
    });
}

inline Var tanh_op(Var x) {
    Tape& t = *x.tape;
    Tensor out = t.val(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    Tensor y = out;
    return detail::unary(x, std::move(out), [y = std::move(y)](const Tensor& g, Tensor& gx) {
        gx.vec().array() += g.vec().array() * (1.0 - y.vec().array().square());
    });
}

inline Var silu(Var x) {
    Tape& t = *x.tape;
    const Tensor& X = t.val(x);
    Tensor out = Tensor::zeros_like(X);
    Tensor dydx = Tensor::zeros_like(X);
    for (std::size_t i = 0; i < X.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-X[i]));
        out[i] = X[i] * s;
        dydx[i] = s * (1.0 + X[i] * (1.0 - s));
    }
    return detail::unary(x, std::move(out), [dydx = std::move(dydx)](const Tensor& g, Tensor& gx) {
        gx.vec().array() += g.vec().array() * dydx.vec().array();
    });
}

/// Exact gaussian-CDF formulation so finite differences match closely.
inline Var gelu(Var x) {
    Tape& t = *x.tape;
    const Tensor& X = t.val(x);
    Tensor out = Tensor::zeros_like(X);
    Tensor dydx = Tensor::zeros_like(X);
    const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < X.size(); ++i) {
        const double v = X[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        out[i] = v * cdf;
        dydx[i] = cdf + v * pdf;
    }
    return detail::unary(x, std::move(out), [dydx = std::move(dydx)](const Tensor& g, Tensor& gx) {
        gx.vec().array() += g.vec().array() * dydx.vec().array();
    });
}

// ---------------------------------------------------------------------------
// normalization and reductions

inline Var softmax_last(Var x) {
    Tape& t = *x.tape;
    const Tensor& X = t.val(x);
    auto [rows, c] = detail::rows_last(X);
    Tensor out = X;
    MapRM m = out.mat(rows, c);
    for (int r = 0; r < rows; ++r) {
        auto row = m.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp();
        row /= row.sum();
    }
    Tensor y = out;
    return detail::unary(x, std::move(out),
                         [y = std::move(y), rows = rows, c = c](const Tensor& g, Tensor& gx) {
                             CMapRM ym = y.mat(rows, c);
                             CMapRM gm = g.mat(rows, c);
                             MapRM gxm = gx.mat(rows, c);
                             for (int r = 0; r < rows; ++r) {
                                 const double dot = gm.row(r).cwiseProduct(ym.row(r)).sum();
                                 gxm.row(r).array() +=
                                     ym.row(r).array() * (gm.row(r).array() - dot);
                             }
                         });
}

/// Layer normalization over the channel (last) axis with affine gain/bias.
inline Var layernorm_last(Var x, Var gain, Var bias, double eps = 1e-5) {
    Tape& t = *x.tape;
    assert(gain.tape == &t && bias.tape == &t);
    const Tensor& X = t.val(x);
    const Tensor& G = t.val(gain);
    const Tensor& B = t.val(bias);
    auto [rows, c] = detail::rows_last(X);
    assert(G.rank() == 1 && G.dim(0) == c && B.rank() == 1 && B.dim(0) == c);
    Tensor out = Tensor::zeros_like(X);
    Tensor xhat = Tensor::zeros_like(X);
    Tensor inv_std({rows});
    CMapRM xm = X.mat(rows, c);
    MapRM om = out.mat(rows, c);
    MapRM hm = xhat.mat(rows, c);
    for (int r = 0; r < rows; ++r) {
        const double mu = xm.row(r).mean();
        const double var = (xm.row(r).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(r)] = is;
        hm.row(r) = (xm.row(r).array() - mu) * is;
        om.row(r) = hm.row(r).cwiseProduct(G.vec().transpose()) + B.vec().transpose();
    }
    bool needs = t.needs(x) || t.needs(gain) || t.needs(bias);
    std::function<void()> back;
    if (needs) {
        Var self{&t, static_cast<int>(t.node_count())};
        back = [&t, x, gain, bias, self, rows, c, xhat = std::move(xhat),
                inv_std = std::move(inv_std)] {
            CMapRM g = t.cgrad(self).mat(rows, c);
            CMapRM hm2 = xhat.mat(rows, c);
            if (t.needs(gain))
                for (int r = 0; r < rows; ++r)
                    t.grad(gain).vec() += g.row(r).cwiseProduct(hm2.row(r)).transpose();
            if (t.needs(bias))
                for (int r = 0; r < rows; ++r) t.grad(bias).vec() += g.row(r).transpose();
            if (t.needs(x)) {
                MapRM gx = t.grad(x).mat(rows, c);
                const auto& gv = t.val(gain).vec();
                for (int r = 0; r < rows; ++r) {
                    Eigen::RowVectorXd gg = g.row(r).cwiseProduct(gv.transpose());
                    const double m1 = gg.mean();
                    const double m2 = gg.cwiseProduct(hm2.row(r)).mean();
                    gx.row(r).array() += inv_std[static_cast<std::size_t>(r)] *
                                         (gg.array() - m1 - hm2.row(r).array() * m2);
                }
            }
        };
    }
    return t.push(std::move(out), needs, std::move(back));
}

/// Fixed-weight contraction to a scalar; the workhorse of the gradient tests.
inline Var weighted_sum(Var x, Tensor w) {
    Tape& t = *x.tape;
    const Tensor& X = t.val(x);
    assert(X.same_shape(w));
    Tensor out({1});
    out[0] = X.vec().dot(w.vec());
    return detail::unary(x, std::move(out), [w = std::move(w)](const Tensor& g, Tensor& gx) {
        gx.vec() += g[0] * w.vec();
    });
}

/// Mean squared error restricted to masked entries: sum(m*(p-y)^2)/sum(m).
inline Var masked_mean_sq(Var pred, Tensor target, Tensor mask) {
    Tape& t = *pred.tape;
    const Tensor& P = t.val(pred);
    assert(P.same_shape(target) && P.same_shape(mask));
    const double denom = mask.vec().sum();
    assert(denom > 0.0);
    Tensor diff = P;
    diff.vec() -= target.vec();
    diff.vec().array() *= mask.vec().array();
    Tensor out({1});
    out[0] = diff.vec().dot(diff.vec()) / denom;
    // diff already carries the mask, and mask^2 = mask for 0/1 masks.
    return detail::unary(pred, std::move(out),
                         [diff = std::move(diff), denom](const Tensor& g, Tensor& gx) {
                             gx.vec() += (2.0 * g[0] / denom) * diff.vec();
                         });
}

// ---------------------------------------------------------------------------
// attention

namespace detail {
using HeadMap = Eigen::Map<MatRM, 0, Eigen::OuterStride<>>;
using CHeadMap = Eigen::Map<const MatRM, 0, Eigen::OuterStride<>>;

inline CHeadMap head(const Tensor& t, int, int seq, int d, int b, int h, int dh) {
    return CHeadMap(t.data() + (static_cast<std::size_t>(b) * seq) * d + static_cast<std::size_t>(h) * dh,
                    seq, dh, Eigen::OuterStride<>(d));
}
inline HeadMap head(Tensor& t, int, int seq, int d, int b, int h, int dh) {
    return HeadMap(t.data() + (static_cast<std::size_t>(b) * seq) * d + static_cast<std::size_t>(h) * dh,
                   seq, dh, Eigen::OuterStride<>(d));
}
}  // namespace detail

/// Scaled dot-product scores: Q (B,n,d), K (B,m,d) -> (B,heads,n,m).
inline Var attn_scores(Var q, Var k, int heads, double scale) {
    Tape& t = detail::tape_of(q, k);
    const Tensor& Q = t.val(q);
    const Tensor& K = t.val(k);
    assert(Q.rank() == 3 && K.rank() == 3 && Q.dim(0) == K.dim(0) && Q.dim(2) == K.dim(2));
    const int B = Q.dim(0), n = Q.dim(1), m = K.dim(1), d = Q.dim(2);
    assert(d % heads == 0);
    const int dh = d / heads;
    Tensor out({B, heads, n, m});
    for (int b = 0; b < B; ++b)
        for (int h = 0; h < heads; ++h) {
            MapRM s(out.data() + (static_cast<std::size_t>(b) * heads + h) * n * m, n, m);
            s.noalias() = scale * (detail::head(Q, B, n, d, b, h, dh) *
                                   detail::head(K, B, m, d, b, h, dh).transpose());
        }
    bool needs = t.needs(q) || t.needs(k);
    std::function<void()> back;
    if (needs) {
        Var self{&t, static_cast<int>(t.node_count())};
        back = [&t, q, k, self, B, n, m, d, heads, dh, scale] {
            const Tensor& g = t.grad(self);
            for (int b = 0; b < B; ++b)
                for (int h = 0; h < heads; ++h) {
                    CMapRM gs(g.data() + (static_cast<std::size_t>(b) * heads + h) * n * m, n, m);
                    if (t.needs(q))
                        detail::head(t.grad(q), B, n, d, b, h, dh) +=
                            scale * (gs * detail::head(t.val(k), B, m, d, b, h, dh));
                    if (t.needs(k))
                        detail::head(t.grad(k), B, m, d, b, h, dh) +=
                            scale * (gs.transpose() * detail::head(t.val(q), B, n, d, b, h, dh));
                }
        };
    }
    return t.push(std::move(out), needs, std::move(back));
}

/// Apply attention weights: S (B,heads,n,m), V (B,m,d) -> (B,n,d).
inline Var attn_apply(Var s, Var v) {
    Tape& t = detail::tape_of(s, v);
    const Tensor& S = t.val(s);
    const Tensor& V = t.val(v);
    assert(S.rank() == 4 && V.rank() == 3 && S.dim(0) == V.dim(0) && S.dim(3) == V.dim(1));
    const int B = S.dim(0), heads = S.dim(1), n = S.dim(2), m = S.dim(3), d = V.dim(2);
    assert(d % heads == 0 && d / heads * heads == d);
    const int dh = d / heads;
    Tensor out({B, n, d});
    for (int b = 0; b < B; ++b)
        for (int h = 0; h < heads; ++h) {
            CMapRM sm(S.data() + (static_cast<std::size_t>(b) * heads + h) * n * m, n, m);
            detail::head(out, B, n, d, b, h, dh).noalias() =
                sm * detail::head(V, B, m, d, b, h, dh);
        }
    bool needs = t.needs(s) || t.needs(v);
    std::function<void()> back;
    if (needs) {
        Var self{&t, static_cast<int>(t.node_count())};
        back = [&t, s, v, self, B, n, m, d, heads, dh] {
            const Tensor& g = t.grad(self);
            for (int b = 0; b < B; ++b)
                for (int h = 0; h < heads; ++h) {
                    detail::CHeadMap go = detail::head(g, B, n, d, b, h, dh);
                    CMapRM sm(t.val(s).data() + (static_cast<std::size_t>(b) * heads + h) * n * m,
                              n, m);
                    if (t.needs(s))
                        MapRM(t.grad(s).data() +
                                  (static_cast<std::size_t>(b) * heads + h) * n * m,
                              n, m)
                            .noalias() += go * detail::head(t.val(v), B, m, d, b, h, dh).transpose();
                    if (t.needs(v))
                        detail::head(t.grad(v), B, m, d, b, h, dh) += sm.transpose() * go;
                }
        };
    }
    return t.push(std::move(out), needs, std::move(back));
}

}  // namespace stimpute
