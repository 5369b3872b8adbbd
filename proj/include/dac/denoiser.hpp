#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dac/layers.hpp"

namespace dac {

enum class Variant { dit, uvit };

inline Variant variant_from_string(const std::string& s) {
    if (s == "dit") return Variant::dit;
    if (s == "uvit") return Variant::uvit;
    throw config_error("unknown denoiser variant '" + s + "' (expected dit or uvit)");
}

inline const char* variant_name(Variant v) { return v == Variant::dit ? "dit" : "uvit"; }

struct DenoiserConfig {
    Variant variant = Variant::dit;
    int width = 128;
    int heads = 4;
    int blocks = 6;  // total; uvit splits into blocks/2 encoder + blocks/2 decoder
    int max_len = 40;
    int time_embed_dim = 128;

    void validate() const {
        DAC_CHECK_CFG(width % heads == 0, "width ", width, " not divisible by heads ", heads);
        DAC_CHECK_CFG(blocks >= 1, "blocks must be >= 1");
        DAC_CHECK_CFG(variant != Variant::uvit || blocks % 2 == 0,
                      "uvit blocks must be even (paired skips), got ", blocks);
        DAC_CHECK_CFG(time_embed_dim >= 2 && time_embed_dim % 2 == 0,
                      "time_embed_dim must be even and >= 2");
    }
};

// Interleaved sin/cos of the step index at geometrically spaced frequencies
// (base 10000). Raw features, before the MLP.
template <typename T>
Tensor<T> time_features(int t, int t_max, int dim) {
    DAC_CHECK(t >= 0 && t <= t_max, "time step ", t, " out of range [0,", t_max, "]");
    Tensor<T> out({1, static_cast<int64_t>(dim)});
    int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::pow(10000.0, -static_cast<double>(i) / half);
        out.data[static_cast<size_t>(2 * i)] = static_cast<T>(std::sin(t * freq));
        out.data[static_cast<size_t>(2 * i + 1)] = static_cast<T>(std::cos(t * freq));
    }
    return out;
}

template <typename T>
struct DenoiserParams {
    int pos_embed = -1;   // L x D learned positions for the text latent
    int null_cond = -1;   // 1 x D learned null audio feature
    MlpP time_mlp;        // sinusoidal features -> D
    std::vector<BlockP> blocks;
    std::vector<LinearP> skip_proj;  // uvit only: 2D -> D per decoder block
    LayerNormP final_ln;
    LinearP out_proj;  // D -> D
};

template <typename T>
DenoiserParams<T> make_denoiser(ParamStore<T>& ps, Rng& rng, const DenoiserConfig& cfg) {
    cfg.validate();
    DenoiserParams<T> p;
    std::string base = std::string("denoiser.") + variant_name(cfg.variant);
    p.pos_embed = ps.add(base + ".pos",
                         Tensor<T>::randn({cfg.max_len, cfg.width}, rng, 0.02));
    p.null_cond = ps.add("cond.null", Tensor<T>::randn({1, cfg.width}, rng, 0.02));
    p.time_mlp.fc1 = make_linear(ps, rng, base + ".time.fc1", cfg.time_embed_dim, cfg.width);
    p.time_mlp.fc2 = make_linear(ps, rng, base + ".time.fc2", cfg.width, cfg.width);
    for (int i = 0; i < cfg.blocks; ++i)
        p.blocks.push_back(
            make_block(ps, rng, base + ".block" + std::to_string(i), cfg.width, cfg.heads, true));
    if (cfg.variant == Variant::uvit) {
        // Identity on the running stream, zero on the skip half: the stack
        // starts out equivalent to no-skip and learns to mix.
        for (int i = 0; i < cfg.blocks / 2; ++i) {
            Tensor<T> w = Tensor<T>::zeros({2 * cfg.width, cfg.width});
            for (int d = 0; d < cfg.width; ++d) w.at(d, d) = T(1);
            LinearP sp;
            sp.w = ps.add(base + ".skip" + std::to_string(i) + ".w", std::move(w));
            sp.b = ps.add(base + ".skip" + std::to_string(i) + ".b",
                          Tensor<T>::zeros({cfg.width}));
            p.skip_proj.push_back(sp);
        }
    }
    p.final_ln = make_layer_norm(ps, base + ".ln_f", static_cast<int64_t>(cfg.width));
    p.out_proj = make_linear(ps, rng, base + ".out", cfg.width, cfg.width);
    return p;
}

// Time conditioning vector for step t: MLP over the sinusoidal features.
template <typename T>
typename Graph<T>::NodeId time_embedding(Graph<T>& g, ParamStore<T>& ps,
                                         const DenoiserParams<T>& p, const DenoiserConfig& cfg,
                                         int t, int t_max) {
    auto feats = g.constant(time_features<T>(t, t_max, cfg.time_embed_dim), "time_features");
    return mlp(g, ps, feats, p.time_mlp);
}

// Predicts the clean latent from (x_t, t, psi(A)). A missing `audio` selects
// the learned null conditioning row. dit: a plain block stack; uvit: encoder
// and decoder halves joined by concatenated long skips.
template <typename T>
typename Graph<T>::NodeId denoise(Graph<T>& g, ParamStore<T>& ps, const DenoiserParams<T>& p,
                                  const DenoiserConfig& cfg, typename Graph<T>::NodeId x_t, int t,
                                  int t_max, std::optional<typename Graph<T>::NodeId> audio) {
    const Tensor<T>& X = g.value(x_t);
    DAC_CHECK(X.ndim() == 2 && X.rows() == cfg.max_len && X.cols() == cfg.width,
              "denoise input shape mismatch: ", X.shape_str(), " expected [", cfg.max_len, "x",
              cfg.width, "]");
    auto cond = audio.has_value() ? *audio : g.param(ps, p.null_cond);
    DAC_CHECK(g.value(cond).cols() == cfg.width, "conditioning width mismatch: ",
              g.value(cond).shape_str());
    auto temb = time_embedding(g, ps, p, cfg, t, t_max);
    auto h = g.add(x_t, g.param(ps, p.pos_embed));
    if (cfg.variant == Variant::dit) {
        for (const auto& blk : p.blocks) h = block_forward(g, ps, h, blk, cond, temb);
    } else {
        int half = cfg.blocks / 2;
        std::vector<typename Graph<T>::NodeId> skips;
        for (int i = 0; i < half; ++i) {
            h = block_forward(g, ps, h, p.blocks[static_cast<size_t>(i)], cond, temb);
            skips.push_back(h);
        }
        for (int i = 0; i < half; ++i) {
            auto skip = skips[static_cast<size_t>(half - 1 - i)];
            h = linear(g, ps, g.concat_cols(h, skip), p.skip_proj[static_cast<size_t>(i)]);
            h = block_forward(g, ps, h, p.blocks[static_cast<size_t>(half + i)], cond, temb);
        }
    }
    return linear(g, ps, layer_norm(g, ps, h, p.final_ln), p.out_proj);
}

}  // namespace dac
