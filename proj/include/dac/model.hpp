#pragma once

#include "dac/audio.hpp"
#include "dac/denoiser.hpp"
#include "dac/text_codec.hpp"

namespace dac {

// The full captioner: embedding table + rounding codec, audio encoder with
// projection, and the conditional denoiser, all in one ParamStore so the
// optimizer and checkpoints see a single ordered parameter list.
template <typename T>
struct CaptionModel {
    CodecConfig codec_cfg;
    AudioEncoderConfig audio_cfg;
    DenoiserConfig dn_cfg;
    int vocab_size = 0;

    ParamStore<T> params;
    CodecParams<T> codec;
    AudioParams<T> audio;
    DenoiserParams<T> denoiser;

    void init(uint64_t seed) {
        DAC_CHECK_CFG(vocab_size >= 5, "vocab size must be >= 5, got ", vocab_size);
        DAC_CHECK_CFG(codec_cfg.embed_dim == dn_cfg.width && audio_cfg.proj_dim == dn_cfg.width,
                      "codec/audio/denoiser widths must agree");
        DAC_CHECK_CFG(codec_cfg.max_len == dn_cfg.max_len, "max_len mismatch");
        Rng rng(fold_seed(seed, 0x70617261));  // parameter-init stream
        codec = make_codec(params, rng, codec_cfg, vocab_size, dn_cfg.heads);
        audio = make_audio_encoder(params, rng, audio_cfg);
        denoiser = make_denoiser(params, rng, dn_cfg);
    }

    typename Graph<T>::NodeId embed(Graph<T>& g, const TokenSeq& seq, T sigma0, Rng* rng) {
        return embed_tokens(g, params, codec, seq, sigma0, rng);
    }

    RoundOut<T> round_nodes(Graph<T>& g, typename Graph<T>::NodeId x0) {
        return round_latent_nodes(g, params, codec, x0);
    }

    typename Graph<T>::NodeId features(Graph<T>& g, const Tensor<T>& mel) {
        return audio_features(g, params, audio, mel);
    }

    typename Graph<T>::NodeId denoise_node(Graph<T>& g, typename Graph<T>::NodeId x_t, int t,
                                           int t_max,
                                           std::optional<typename Graph<T>::NodeId> cond) {
        return denoise(g, params, denoiser, dn_cfg, x_t, t, t_max, cond);
    }

    // Plain-tensor conveniences for sampling and tests.
    Tensor<T> features_value(const Tensor<T>& mel) {
        Graph<T> g;
        return g.value(features(g, mel));
    }

    Tensor<T> denoise_value(const Tensor<T>& x_t, int t, int t_max, const Tensor<T>* cond) {
        Graph<T> g;
        std::optional<typename Graph<T>::NodeId> c;
        if (cond != nullptr) c = g.constant(*cond, "audio_features");
        auto out = denoise_node(g, g.constant(x_t, "x_t"), t, t_max, c);
        return g.value(out);
    }
};

using CaptionModelF = CaptionModel<float>;

}  // namespace dac
