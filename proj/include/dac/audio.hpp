#pragma once

#include <string>
#include <vector>

#include "dac/layers.hpp"

namespace dac {

constexpr int kSampleRate = 16000;
constexpr double kClipSeconds = 2.0;
constexpr int kClipSamples = 32000;

struct Waveform {
    std::vector<float> samples;
    int sample_rate = kSampleRate;
};

// Zero-pad or truncate to the fixed 2 s clip length.
Waveform fit_clip(Waveform w);

// RIFF WAV, PCM 16-bit mono 16 kHz, little-endian.
void write_wav(const Waveform& w, const std::string& path);
Waveform read_wav(const std::string& path);

struct MelConfig {
    int n_fft = 512;
    int hop = 256;
    int bands = 64;
    double fmin = 0.0;
    double fmax = 8000.0;
};

// Triangular filterbank on the HTK mel scale, mel = 2595*log10(1 + f/700).
// weights[b][k] over the n_fft/2+1 magnitude bins.
std::vector<std::vector<double>> mel_filterbank(const MelConfig& cfg, int sample_rate);

// Magnitude STFT (periodic Hann) -> mel filterbank -> natural log floored at
// 1e-10. Frames: F = floor((len - n_fft)/hop) + 1, no centering.
TensorF mel_spectrogram(const Waveform& w, const MelConfig& cfg = MelConfig{});

// In-order DFT magnitudes of one windowed frame; the test oracle uses a naive
// direct DFT against this radix-2 implementation.
std::vector<double> fft_magnitudes(const std::vector<double>& frame);

struct AudioEncoderConfig {
    MelConfig mel;
    int conv1_channels = 8;
    int conv2_channels = 16;
    int width = 128;   // H: encoder hidden width
    int blocks = 2;    // self-attention layers over frames
    int heads = 4;
    int proj_dim = 128;  // D: conditioning width after psi
};

template <typename T>
struct AudioParams {
    int conv1_w = -1, conv1_b = -1;
    int conv2_w = -1, conv2_b = -1;
    LinearP flatten;  // (c2 * bands/4) -> width
    std::vector<BlockP> blocks;
    LinearP proj;  // width -> proj_dim
    LayerNormP proj_ln;
};

template <typename T>
AudioParams<T> make_audio_encoder(ParamStore<T>& ps, Rng& rng, const AudioEncoderConfig& cfg) {
    AudioParams<T> p;
    int c1 = cfg.conv1_channels, c2 = cfg.conv2_channels;
    p.conv1_w = ps.add("audio.conv1.w",
                       Tensor<T>::randn({c1, 1, 3, 3}, rng, std::sqrt(2.0 / 9.0)));
    p.conv1_b = ps.add("audio.conv1.b", Tensor<T>::zeros({c1}));
    p.conv2_w = ps.add("audio.conv2.w",
                       Tensor<T>::randn({c2, c1, 3, 3}, rng, std::sqrt(2.0 / (9.0 * c1))));
    p.conv2_b = ps.add("audio.conv2.b", Tensor<T>::zeros({c2}));
    int64_t flat = static_cast<int64_t>(c2) * (cfg.mel.bands / 4);
    p.flatten = make_linear(ps, rng, "audio.flatten", flat, cfg.width);
    for (int i = 0; i < cfg.blocks; ++i)
        p.blocks.push_back(
            make_block(ps, rng, "audio.block" + std::to_string(i), cfg.width, cfg.heads, false));
    p.proj = make_linear(ps, rng, "audio.proj", cfg.width, cfg.proj_dim);
    p.proj_ln = make_layer_norm(ps, "audio.proj_ln", static_cast<int64_t>(cfg.proj_dim));
    return p;
}

// Two strided 3x3 convs (stride 2 in time and frequency, so M = ceil(F/4)),
// frames flattened to rows, then self-attention blocks over frames.
template <typename T>
typename Graph<T>::NodeId encode_audio(Graph<T>& g, ParamStore<T>& ps, const AudioParams<T>& p,
                                       const Tensor<T>& mel) {
    DAC_CHECK(mel.ndim() == 2, "mel input must be [F x B], got ", mel.shape_str());
    Tensor<T> img = mel;
    img.shape = {1, mel.rows(), mel.cols()};
    auto x = g.constant(std::move(img), "mel");
    x = g.gelu(g.conv2d(x, g.param(ps, p.conv1_w), g.param(ps, p.conv1_b), 2, 1));
    x = g.gelu(g.conv2d(x, g.param(ps, p.conv2_w), g.param(ps, p.conv2_b), 2, 1));
    x = linear(g, ps, g.flatten_chw(x), p.flatten);
    for (const auto& blk : p.blocks) x = block_forward(g, ps, x, blk);
    return x;
}

// psi(A): linear projection then layer normalization into the conditioning
// space consumed by cross-attention.
template <typename T>
typename Graph<T>::NodeId project_features(Graph<T>& g, ParamStore<T>& ps, const AudioParams<T>& p,
                                           typename Graph<T>::NodeId enc) {
    return layer_norm(g, ps, linear(g, ps, enc, p.proj), p.proj_ln);
}

template <typename T>
typename Graph<T>::NodeId audio_features(Graph<T>& g, ParamStore<T>& ps, const AudioParams<T>& p,
                                         const Tensor<T>& mel) {
    return project_features(g, ps, p, encode_audio(g, ps, p, mel));
}

}  // namespace dac
