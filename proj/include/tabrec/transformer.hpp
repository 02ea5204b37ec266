#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "tabrec/rng.hpp"
#include "tabrec/tensor.hpp"

namespace tabrec {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

inline void reg(NamedParams& out, const std::string& name, const Tensor& t) { out.emplace_back(name, t); }

inline int64_t param_count(const NamedParams& params) {
    int64_t total = 0;
    for (const auto& [name, t] : params) total += t.numel();
    return total;
}

struct Linear {
    Tensor w, b;

    static Linear make(int in, int out, Rng& rng, float stddev = 0.02f) {
        Linear l;
        l.w = randn({in, out}, stddev, rng);
        l.b = Tensor::zeros({out}, true);
        return l;
    }

    Tensor operator()(const Tensor& x) const { return add(matmul(x, w), b); }

    void collect(NamedParams& out, const std::string& prefix) const {
        reg(out, prefix + ".w", w);
        reg(out, prefix + ".b", b);
    }
};

struct LayerNormParams {
    Tensor gamma, beta;

    static LayerNormParams make(int dim) {
        LayerNormParams ln;
        ln.gamma = Tensor::full({dim}, 1.0f, true);
        ln.beta = Tensor::zeros({dim}, true);
        return ln;
    }

    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

    void collect(NamedParams& out, const std::string& prefix) const {
        reg(out, prefix + ".g", gamma);
        reg(out, prefix + ".b", beta);
    }
};

// Additive attention mask: 0 on allowed positions, -1e9 on future ones.
inline Tensor causal_mask(int len) {
    Tensor m = Tensor::zeros({len, len});
    for (int i = 0; i < len; ++i)
        for (int j = i + 1; j < len; ++j) m.data()[static_cast<int64_t>(i) * len + j] = -1e9f;
    return m;
}

struct MultiHeadAttention {
    int heads = 0;
    Linear q, k, v, o;

    static MultiHeadAttention make(int width, int heads, Rng& rng) {
        if (width % heads != 0)
            throw std::invalid_argument("attention width " + std::to_string(width) + " not divisible by " +
                                        std::to_string(heads) + " heads");
        MultiHeadAttention a;
        a.heads = heads;
        a.q = Linear::make(width, width, rng);
        a.k = Linear::make(width, width, rng);
        a.v = Linear::make(width, width, rng);
        a.o = Linear::make(width, width, rng);
        return a;
    }

    // x_q (B, Tq, D) attends over x_kv (B, Tk, D); mask, when defined, is an
    // additive (Tq, Tk) tensor broadcast over batch and heads.
    Tensor operator()(const Tensor& x_q, const Tensor& x_kv, const Tensor& mask, float drop_p, Rng* drop_rng) const {
        const int B = x_q.shape()[0], Tq = x_q.shape()[1], D = x_q.shape()[2];
        const int Tk = x_kv.shape()[1];
        const int dh = D / heads;

        auto split = [&](const Tensor& t, int T) {
            return permute(reshape(t, {B, T, heads, dh}), {0, 2, 1, 3});  // (B, h, T, dh)
        };
        Tensor qh = split(q(x_q), Tq);
        Tensor kh = split(k(x_kv), Tk);
        Tensor vh = split(v(x_kv), Tk);

        Tensor scores = mul_scalar(matmul(qh, permute(kh, {0, 1, 3, 2})), 1.0f / std::sqrt(static_cast<float>(dh)));
        if (mask.defined()) scores = add(scores, mask);
        Tensor att = softmax(scores);
        if (drop_rng) att = dropout(att, drop_p, *drop_rng);
        Tensor ctx = reshape(permute(matmul(att, vh), {0, 2, 1, 3}), {B, Tq, D});
        return o(ctx);
    }

    void collect(NamedParams& out, const std::string& prefix) const {
        q.collect(out, prefix + ".q");
        k.collect(out, prefix + ".k");
        v.collect(out, prefix + ".v");
        o.collect(out, prefix + ".o");
    }
};

// Pre-norm encoder block: x + attn(ln(x)), x + mlp(ln(x)).
struct EncoderBlock {
    LayerNormParams ln1, ln2;
    MultiHeadAttention attn;
    Linear fc1, fc2;

    static EncoderBlock make(int width, int heads, int mlp_ratio, Rng& rng) {
        EncoderBlock b;
        b.ln1 = LayerNormParams::make(width);
        b.ln2 = LayerNormParams::make(width);
        b.attn = MultiHeadAttention::make(width, heads, rng);
        b.fc1 = Linear::make(width, width * mlp_ratio, rng);
        b.fc2 = Linear::make(width * mlp_ratio, width, rng);
        return b;
    }

    Tensor operator()(Tensor x, float drop_p, Rng* drop_rng) const {
        Tensor h = ln1(x);
        Tensor a = attn(h, h, Tensor(), drop_p, drop_rng);
        if (drop_rng) a = dropout(a, drop_p, *drop_rng);
        x = add(x, a);
        Tensor m = fc2(gelu(fc1(ln2(x))));
        if (drop_rng) m = dropout(m, drop_p, *drop_rng);
        return add(x, m);
    }

    void collect(NamedParams& out, const std::string& prefix) const {
        ln1.collect(out, prefix + ".ln1");
        attn.collect(out, prefix + ".attn");
        ln2.collect(out, prefix + ".ln2");
        fc1.collect(out, prefix + ".fc1");
        fc2.collect(out, prefix + ".fc2");
    }
};

// Pre-norm decoder block: causal self-attention, cross-attention over the
// encoder memory, MLP.
struct DecoderBlock {
    LayerNormParams ln1, ln2, ln3;
    MultiHeadAttention self_attn, cross_attn;
    Linear fc1, fc2;

    static DecoderBlock make(int width, int heads, int mlp_ratio, Rng& rng) {
        DecoderBlock b;
        b.ln1 = LayerNormParams::make(width);
        b.ln2 = LayerNormParams::make(width);
        b.ln3 = LayerNormParams::make(width);
        b.self_attn = MultiHeadAttention::make(width, heads, rng);
        b.cross_attn = MultiHeadAttention::make(width, heads, rng);
        b.fc1 = Linear::make(width, width * mlp_ratio, rng);
        b.fc2 = Linear::make(width * mlp_ratio, width, rng);
        return b;
    }

    Tensor operator()(Tensor x, const Tensor& memory, const Tensor& mask, float drop_p, Rng* drop_rng) const {
        Tensor h = ln1(x);
        Tensor a = self_attn(h, h, mask, drop_p, drop_rng);
        if (drop_rng) a = dropout(a, drop_p, *drop_rng);
        x = add(x, a);
        Tensor c = cross_attn(ln2(x), memory, Tensor(), drop_p, drop_rng);
        if (drop_rng) c = dropout(c, drop_p, *drop_rng);
        x = add(x, c);
        Tensor m = fc2(gelu(fc1(ln3(x))));
        if (drop_rng) m = dropout(m, drop_p, *drop_rng);
        return add(x, m);
    }

    void collect(NamedParams& out, const std::string& prefix) const {
        ln1.collect(out, prefix + ".ln1");
        self_attn.collect(out, prefix + ".self");
        ln2.collect(out, prefix + ".ln2");
        cross_attn.collect(out, prefix + ".cross");
        ln3.collect(out, prefix + ".ln3");
        fc1.collect(out, prefix + ".fc1");
        fc2.collect(out, prefix + ".fc2");
    }
};

}  // namespace tabrec
