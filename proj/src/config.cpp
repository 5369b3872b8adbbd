#include "dac/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace dac {

namespace {

struct Field {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int64_t r = std::stoll(v, &pos);
        DAC_CHECK_CFG(pos == v.size(), "config key ", key, ": bad integer '", v, "'");
        return r;
    } catch (const config_error&) {
        throw;
    } catch (...) {
        throw config_error(format_msg("config key ", key, ": bad integer '", v, "'"));
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        DAC_CHECK_CFG(pos == v.size(), "config key ", key, ": bad number '", v, "'");
        return r;
    } catch (const config_error&) {
        throw;
    } catch (...) {
        throw config_error(format_msg("config key ", key, ": bad number '", v, "'"));
    }
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

#define F_INT(name)                                                        \
    Field{#name, [](const RunConfig& c) { return std::to_string(c.name); }, \
          [](RunConfig& c, const std::string& v) { c.name = static_cast<decltype(c.name)>(parse_int(#name, v)); }}
#define F_DBL(name)                                                  \
    Field{#name, [](const RunConfig& c) { return fmt_double(c.name); }, \
          [](RunConfig& c, const std::string& v) { c.name = parse_double(#name, v); }}
#define F_STR(name)                                       \
    Field{#name, [](const RunConfig& c) { return c.name; }, \
          [](RunConfig& c, const std::string& v) { c.name = v; }}

const std::vector<Field>& fields() {
    static const std::vector<Field> fs = {
        F_STR(variant),       F_INT(width),          F_INT(heads),
        F_INT(blocks),        F_INT(time_embed_dim), F_INT(max_len),
        F_INT(transition_layers),
        F_INT(diffusion_steps), F_DBL(beta1),        F_DBL(betaT),
        F_INT(stride),        F_DBL(guidance),       F_DBL(sigma0),
        F_INT(n_fft),         F_INT(hop),            F_INT(mel_bands),
        F_INT(conv1_channels), F_INT(conv2_channels), F_INT(enc_width),
        F_INT(enc_blocks),
        F_DBL(lambda_mse),    F_DBL(lambda_ce),      F_DBL(lambda_valid),
        F_DBL(p_uncond),      F_DBL(lr),             F_INT(warmup_steps),
        F_INT(batch_size),    F_INT(epochs),         F_INT(codec_only),
        F_INT(checkpoint_every),
        F_INT(n_train),       F_INT(n_val),          F_INT(n_test),
        F_INT(seed),          F_INT(threads),        F_INT(num_samples),
        F_STR(data_dir),      F_STR(out_dir),        F_STR(checkpoint),
    };
    return fs;
}

#undef F_INT
#undef F_DBL
#undef F_STR

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (key == f.key) {
            f.set(*this, value);
            return;
        }
    }
    throw config_error("unknown config key '" + key + "'");
}

std::string RunConfig::to_kv() const {
    std::string out;
    for (const auto& f : fields()) {
        out += f.key;
        out += '=';
        out += f.get(*this);
        out += '\n';
    }
    return out;
}

RunConfig RunConfig::from_kv(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        DAC_CHECK_CFG(eq != std::string::npos, "config line missing '=': ", line);
        cfg.set(line.substr(0, eq), line.substr(eq + 1));
    }
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    DAC_CHECK_CFG(f.good(), "cannot read config file ", path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_kv(ss.str());
}

void RunConfig::validate() const {
    variant_from_string(variant);  // throws on unknown variant
    DAC_CHECK_CFG(width % heads == 0, "width ", width, " not divisible by heads ", heads);
    DAC_CHECK_CFG(blocks >= 1, "blocks must be >= 1");
    DAC_CHECK_CFG(variant != "uvit" || blocks % 2 == 0, "uvit blocks must be even, got ", blocks);
    DAC_CHECK_CFG(max_len >= 4, "max_len must be >= 4");
    DAC_CHECK_CFG(width >= 8, "width must be >= 8");
    DAC_CHECK_CFG(diffusion_steps >= 1, "diffusion_steps must be >= 1");
    DAC_CHECK_CFG(0.0 < beta1 && beta1 <= betaT && betaT < 1.0,
                  "need 0 < beta1 <= betaT < 1, got ", beta1, ", ", betaT);
    DAC_CHECK_CFG(1 <= stride && stride <= diffusion_steps, "stride must be in [1,",
                  diffusion_steps, "], got ", stride);
    DAC_CHECK_CFG(guidance >= 0.0, "guidance scale must be >= 0, got ", guidance);
    DAC_CHECK_CFG(sigma0 >= 0.0, "sigma0 must be >= 0, got ", sigma0);
    DAC_CHECK_CFG(lambda_mse >= 0.0 && lambda_ce >= 0.0 && lambda_valid >= 0.0,
                  "loss weights must be >= 0");
    DAC_CHECK_CFG(0.0 <= p_uncond && p_uncond <= 1.0, "p_uncond must be in [0,1], got ", p_uncond);
    DAC_CHECK_CFG(lr > 0.0, "lr must be > 0");
    DAC_CHECK_CFG(warmup_steps >= 0, "warmup_steps must be >= 0");
    DAC_CHECK_CFG(batch_size >= 1, "batch_size must be >= 1");
    DAC_CHECK_CFG(epochs >= 1, "epochs must be >= 1");
    DAC_CHECK_CFG(n_train >= 1 && n_val >= 1 && n_test >= 1, "split sizes must be >= 1");
    DAC_CHECK_CFG(n_fft >= 16 && (n_fft & (n_fft - 1)) == 0, "n_fft must be a power of two >= 16");
    DAC_CHECK_CFG(hop >= 1, "hop must be >= 1");
    DAC_CHECK_CFG(mel_bands % 4 == 0 && mel_bands >= 4, "mel_bands must be a multiple of 4");
    DAC_CHECK_CFG(num_samples >= 1, "num_samples must be >= 1");
    DAC_CHECK_CFG(threads >= 0, "threads must be >= 0");
}

CodecConfig RunConfig::codec_config() const {
    CodecConfig c;
    c.max_len = max_len;
    c.embed_dim = width;
    c.sigma0 = sigma0;
    c.transition_layers = transition_layers;
    return c;
}

AudioEncoderConfig RunConfig::audio_config() const {
    AudioEncoderConfig a;
    a.mel.n_fft = n_fft;
    a.mel.hop = hop;
    a.mel.bands = mel_bands;
    a.conv1_channels = conv1_channels;
    a.conv2_channels = conv2_channels;
    a.width = enc_width;
    a.blocks = enc_blocks;
    a.heads = heads;
    a.proj_dim = width;
    return a;
}

DenoiserConfig RunConfig::denoiser_config() const {
    DenoiserConfig d;
    d.variant = variant_from_string(variant);
    d.width = width;
    d.heads = heads;
    d.blocks = blocks;
    d.max_len = max_len;
    d.time_embed_dim = time_embed_dim;
    return d;
}

}  // namespace dac
