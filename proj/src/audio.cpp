#include "dac/audio.hpp"

#include <cstring>
#include <fstream>

namespace dac {

Waveform fit_clip(Waveform w) {
    w.samples.resize(kClipSamples, 0.0f);
    return w;
}

namespace {

void put_u32(std::string& s, uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, uint16_t v) {
    for (int i = 0; i < 2; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
uint32_t get_u32(const std::string& s, size_t off) {
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<uint8_t>(s[off + static_cast<size_t>(i)]);
    return v;
}
uint16_t get_u16(const std::string& s, size_t off) {
    return static_cast<uint16_t>(static_cast<uint8_t>(s[off]) |
                                 (static_cast<uint8_t>(s[off + 1]) << 8));
}

}  // namespace

void write_wav(const Waveform& w, const std::string& path) {
    std::string out;
    uint32_t n = static_cast<uint32_t>(w.samples.size());
    uint32_t data_bytes = n * 2;
    out += "RIFF";
    put_u32(out, 36 + data_bytes);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<uint32_t>(w.sample_rate));
    put_u32(out, static_cast<uint32_t>(w.sample_rate) * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out += "data";
    put_u32(out, data_bytes);
    for (float s : w.samples) {
        float c = std::min(1.0f, std::max(-1.0f, s));
        int v = static_cast<int>(std::lround(c * 32767.0));
        put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(v)));
    }
    std::ofstream f(path, std::ios::binary);
    DAC_CHECK(f.good(), "cannot write wav file ", path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    DAC_CHECK(f.good(), "short write to ", path);
}

Waveform read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    DAC_CHECK(f.good(), "cannot open wav file ", path);
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    DAC_CHECK(raw.size() >= 44 && raw.compare(0, 4, "RIFF") == 0 && raw.compare(8, 4, "WAVE") == 0,
              "not a RIFF/WAVE file: ", path);
    size_t off = 12;
    int channels = -1, bits = -1;
    uint32_t rate = 0;
    Waveform w;
    bool got_data = false;
    while (off + 8 <= raw.size()) {
        std::string tag = raw.substr(off, 4);
        uint32_t len = get_u32(raw, off + 4);
        off += 8;
        DAC_CHECK(off + len <= raw.size(), "truncated wav chunk '", tag, "' in ", path);
        if (tag == "fmt ") {
            DAC_CHECK(len >= 16, "malformed fmt chunk in ", path);
            DAC_CHECK(get_u16(raw, off) == 1, "wav must be PCM: ", path);
            channels = get_u16(raw, off + 2);
            rate = get_u32(raw, off + 4);
            bits = get_u16(raw, off + 14);
        } else if (tag == "data") {
            DAC_CHECK(channels == 1 && bits == 16, "wav must be 16-bit mono: ", path);
            DAC_CHECK(rate == kSampleRate, "wav must be ", kSampleRate, " Hz, got ", rate, ": ", path);
            w.sample_rate = static_cast<int>(rate);
            uint32_t n = len / 2;
            w.samples.resize(n);
            for (uint32_t i = 0; i < n; ++i) {
                int16_t v = static_cast<int16_t>(get_u16(raw, off + 2 * i));
                w.samples[i] = static_cast<float>(v) / 32767.0f;
            }
            got_data = true;
        }
        off += len + (len & 1);
    }
    DAC_CHECK(got_data, "wav file has no data chunk: ", path);
    return w;
}

namespace {

// Iterative radix-2 Cooley-Tukey over n = power of two.
void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
    size_t n = re.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
        double wr = std::cos(ang), wi = std::sin(ang);
        for (size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (size_t k = 0; k < len / 2; ++k) {
                size_t a = i + k, b = i + k + len / 2;
                double tr = re[b] * cr - im[b] * ci;
                double ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

std::vector<double> fft_magnitudes(const std::vector<double>& frame) {
    size_t n = frame.size();
    DAC_CHECK(n > 0 && (n & (n - 1)) == 0, "fft size must be a power of two, got ", n);
    std::vector<double> re = frame, im(n, 0.0);
    fft_radix2(re, im);
    std::vector<double> mag(n / 2 + 1);
    for (size_t k = 0; k <= n / 2; ++k) mag[k] = std::sqrt(re[k] * re[k] + im[k] * im[k]);
    return mag;
}

std::vector<std::vector<double>> mel_filterbank(const MelConfig& cfg, int sample_rate) {
    int bins = cfg.n_fft / 2 + 1;
    double mel_lo = hz_to_mel(cfg.fmin), mel_hi = hz_to_mel(cfg.fmax);
    std::vector<double> edges(static_cast<size_t>(cfg.bands + 2));
    for (int i = 0; i < cfg.bands + 2; ++i)
        edges[static_cast<size_t>(i)] =
            mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / static_cast<double>(cfg.bands + 1));
    std::vector<std::vector<double>> fb(static_cast<size_t>(cfg.bands),
                                        std::vector<double>(static_cast<size_t>(bins), 0.0));
    for (int b = 0; b < cfg.bands; ++b) {
        double lo = edges[static_cast<size_t>(b)];
        double mid = edges[static_cast<size_t>(b + 1)];
        double hi = edges[static_cast<size_t>(b + 2)];
        for (int k = 0; k < bins; ++k) {
            double f = static_cast<double>(k) * sample_rate / cfg.n_fft;
            double wgt = 0.0;
            if (f > lo && f < mid)
                wgt = (f - lo) / (mid - lo);
            else if (f >= mid && f < hi)
                wgt = (hi - f) / (hi - mid);
            fb[static_cast<size_t>(b)][static_cast<size_t>(k)] = wgt;
        }
    }
    return fb;
}

TensorF mel_spectrogram(const Waveform& w, const MelConfig& cfg) {
    DAC_CHECK(w.sample_rate == kSampleRate, "expected ", kSampleRate, " Hz input, got ",
              w.sample_rate);
    int64_t len = static_cast<int64_t>(w.samples.size());
    DAC_CHECK(len >= cfg.n_fft, "waveform shorter than n_fft: ", len, " < ", cfg.n_fft);
    int64_t frames = (len - cfg.n_fft) / cfg.hop + 1;
    // Periodic Hann window.
    std::vector<double> window(static_cast<size_t>(cfg.n_fft));
    for (int i = 0; i < cfg.n_fft; ++i)
        window[static_cast<size_t>(i)] =
            0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * i / cfg.n_fft);
    auto fb = mel_filterbank(cfg, w.sample_rate);
    int bins = cfg.n_fft / 2 + 1;
    TensorF out({frames, static_cast<int64_t>(cfg.bands)});
    std::vector<double> frame(static_cast<size_t>(cfg.n_fft));
    for (int64_t f = 0; f < frames; ++f) {
        int64_t start = f * cfg.hop;
        for (int i = 0; i < cfg.n_fft; ++i)
            frame[static_cast<size_t>(i)] =
                static_cast<double>(w.samples[static_cast<size_t>(start + i)]) *
                window[static_cast<size_t>(i)];
        auto mag = fft_magnitudes(frame);
        for (int b = 0; b < cfg.bands; ++b) {
            // Power spectrum through the filterbank: doubling the waveform
            // raises every unfloored cell by ln 4.
            double acc = 0.0;
            for (int k = 0; k < bins; ++k)
                acc += fb[static_cast<size_t>(b)][static_cast<size_t>(k)] *
                       mag[static_cast<size_t>(k)] * mag[static_cast<size_t>(k)];
            out.at(f, b) = static_cast<float>(std::log(std::max(acc, 1e-10)));
        }
    }
    DAC_CHECK(out.all_finite(), "non-finite value produced by op 'mel_spectrogram'");
    return out;
}

}  // namespace dac
