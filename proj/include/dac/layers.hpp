#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dac/graph.hpp"

namespace dac {

// Parameter handles are ParamStore indices; the same handle structs drive the
// float training path and the double verification path.

struct LinearP {
    int w = -1;
    int b = -1;
};

struct LayerNormP {
    int gain = -1;
    int bias = -1;
};

struct AttentionP {
    LinearP q, k, v, o;
    int heads = 1;
};

struct MlpP {
    LinearP fc1, fc2;
};

// Pre-LN transformer block: self-attention, optional cross-attention over a
// conditioning sequence, MLP. Residual connections around each.
struct BlockP {
    LayerNormP ln1, ln2, ln3;
    AttentionP self_attn;
    AttentionP cross_attn;  // unused when has_cross is false
    MlpP mlp;
    bool has_cross = false;
};

template <typename T>
LinearP make_linear(ParamStore<T>& ps, Rng& rng, const std::string& name, int64_t in, int64_t out,
                    double init_std = 0.02, bool bias = true) {
    LinearP p;
    p.w = ps.add(name + ".w", Tensor<T>::randn({in, out}, rng, init_std));
    if (bias) p.b = ps.add(name + ".b", Tensor<T>::zeros({out}));
    return p;
}

template <typename T>
LayerNormP make_layer_norm(ParamStore<T>& ps, const std::string& name, int64_t d) {
    LayerNormP p;
    p.gain = ps.add(name + ".g", Tensor<T>::full({d}, T(1)));
    p.bias = ps.add(name + ".b", Tensor<T>::zeros({d}));
    return p;
}

template <typename T>
AttentionP make_attention(ParamStore<T>& ps, Rng& rng, const std::string& name, int64_t d,
                          int heads, double init_std = 0.02) {
    DAC_CHECK(d % heads == 0, "width ", d, " not divisible by ", heads, " heads");
    AttentionP p;
    p.q = make_linear(ps, rng, name + ".q", d, d, init_std);
    // No key bias: a uniform shift of a score row is a softmax null
    // direction, so the parameter could never receive gradient.
    p.k = make_linear(ps, rng, name + ".k", d, d, init_std, /*bias=*/false);
    p.v = make_linear(ps, rng, name + ".v", d, d, init_std);
    p.o = make_linear(ps, rng, name + ".o", d, d, init_std);
    p.heads = heads;
    return p;
}

template <typename T>
MlpP make_mlp(ParamStore<T>& ps, Rng& rng, const std::string& name, int64_t d, int64_t hidden,
              double init_std = 0.02) {
    MlpP p;
    p.fc1 = make_linear(ps, rng, name + ".fc1", d, hidden, init_std);
    p.fc2 = make_linear(ps, rng, name + ".fc2", hidden, d, init_std);
    return p;
}

template <typename T>
BlockP make_block(ParamStore<T>& ps, Rng& rng, const std::string& name, int64_t d, int heads,
                  bool cross, double init_std = 0.02) {
    BlockP p;
    p.ln1 = make_layer_norm(ps, name + ".ln1", d);
    p.self_attn = make_attention(ps, rng, name + ".self", d, heads, init_std);
    if (cross) {
        p.ln2 = make_layer_norm(ps, name + ".ln2", d);
        p.cross_attn = make_attention(ps, rng, name + ".cross", d, heads, init_std);
    }
    p.ln3 = make_layer_norm(ps, name + ".ln3", d);
    p.mlp = make_mlp(ps, rng, name + ".mlp", d, 4 * d, init_std);
    p.has_cross = cross;
    return p;
}

// ---- forward builders --------------------------------------------------------

template <typename T>
typename Graph<T>::NodeId linear(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::NodeId x,
                                 const LinearP& p) {
    auto y = g.matmul(x, g.param(ps, p.w));
    if (p.b >= 0) y = g.add_row(y, g.param(ps, p.b));
    return y;
}

template <typename T>
typename Graph<T>::NodeId layer_norm(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::NodeId x,
                                     const LayerNormP& p, T eps = T(1e-5)) {
    return g.layer_norm(x, g.param(ps, p.gain), g.param(ps, p.bias), eps);
}

// Multi-head scaled dot-product attention. Queries come from xq, keys/values
// from xkv (xq == xkv gives self-attention). Scores are softmaxed over the
// key axis, heads concatenated and re-projected.
template <typename T>
typename Graph<T>::NodeId attention(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::NodeId xq,
                                    typename Graph<T>::NodeId xkv, const AttentionP& p) {
    DAC_CHECK(g.value(xkv).rows() > 0, "empty conditioning");
    auto q = linear(g, ps, xq, p.q);
    auto k = linear(g, ps, xkv, p.k);
    auto v = linear(g, ps, xkv, p.v);
    int64_t d = g.value(q).cols();
    int64_t dh = d / p.heads;
    T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
    typename Graph<T>::NodeId out = -1;
    for (int h = 0; h < p.heads; ++h) {
        auto qh = g.slice_cols(q, h * dh, (h + 1) * dh);
        auto kh = g.slice_cols(k, h * dh, (h + 1) * dh);
        auto vh = g.slice_cols(v, h * dh, (h + 1) * dh);
        auto scores = g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt);
        auto weights = g.softmax(scores, 1);
        auto ctx = g.matmul(weights, vh);
        out = (h == 0) ? ctx : g.concat_cols(out, ctx);
    }
    return linear(g, ps, out, p.o);
}

template <typename T>
typename Graph<T>::NodeId mlp(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::NodeId x,
                              const MlpP& p) {
    return linear(g, ps, g.gelu(linear(g, ps, x, p.fc1)), p.fc2);
}

// One block. `cond` must be set when the block has cross-attention; `temb`
// (a 1xD or D tensor node) is added to the block input when provided.
template <typename T>
typename Graph<T>::NodeId block_forward(Graph<T>& g, ParamStore<T>& ps,
                                        typename Graph<T>::NodeId x, const BlockP& p,
                                        typename Graph<T>::NodeId cond = -1,
                                        typename Graph<T>::NodeId temb = -1) {
    if (temb >= 0) x = g.add_row(x, temb);
    auto nx = layer_norm(g, ps, x, p.ln1);
    x = g.add(x, attention(g, ps, nx, nx, p.self_attn));
    if (p.has_cross) {
        DAC_CHECK(cond >= 0, "block requires conditioning features");
        x = g.add(x, attention(g, ps, layer_norm(g, ps, x, p.ln2), cond, p.cross_attn));
    }
    x = g.add(x, mlp(g, ps, layer_norm(g, ps, x, p.ln3), p.mlp));
    return x;
}

}  // namespace dac
