#pragma once

#include <map>
#include <string>

#include "dac/model.hpp"

namespace dac {

// Every tunable in one place. Key names in config files and checkpoint
// snapshots are exactly the field names below; flags override file values.
struct RunConfig {
    // model
    std::string variant = "dit";
    int width = 128;
    int heads = 4;
    int blocks = 6;
    int time_embed_dim = 128;
    int max_len = 40;
    int transition_layers = 2;

    // diffusion
    int diffusion_steps = 1000;
    double beta1 = 1e-4;
    double betaT = 0.02;
    int stride = 60;
    double guidance = 2.5;
    double sigma0 = 0.1;

    // audio frontend
    int n_fft = 512;
    int hop = 256;
    int mel_bands = 64;
    int conv1_channels = 8;
    int conv2_channels = 16;
    int enc_width = 128;
    int enc_blocks = 2;

    // training
    double lambda_mse = 1.0;
    double lambda_ce = 1.0;
    double lambda_valid = 0.1;
    double p_uncond = 0.1;
    double lr = 1e-4;
    int warmup_steps = 200;
    int batch_size = 32;
    int epochs = 40;
    int codec_only = 0;
    int checkpoint_every = 0;  // epochs between periodic checkpoints; 0 = final only

    // data
    int n_train = 5000;
    int n_val = 250;
    int n_test = 500;

    // run
    uint64_t seed = 1234;
    int threads = 0;  // 0 = hardware concurrency
    int num_samples = 1;
    std::string data_dir;
    std::string out_dir;
    std::string checkpoint;

    void validate() const;
    std::string to_kv() const;

    static RunConfig from_kv(const std::string& text);
    static RunConfig from_file(const std::string& path);
    void set(const std::string& key, const std::string& value);

    CodecConfig codec_config() const;
    AudioEncoderConfig audio_config() const;
    DenoiserConfig denoiser_config() const;
};

// Builds a model whose sub-configs are all derived from the run config.
template <typename T>
CaptionModel<T> make_model(const RunConfig& cfg, int vocab_size) {
    cfg.validate();
    CaptionModel<T> m;
    m.codec_cfg = cfg.codec_config();
    m.audio_cfg = cfg.audio_config();
    m.dn_cfg = cfg.denoiser_config();
    m.vocab_size = vocab_size;
    m.init(cfg.seed);
    return m;
}

}  // namespace dac
