#include "dac/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace dac {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kFadeSeconds = 0.005;
constexpr double kClickWidth = 0.010;
constexpr double kClickRate = 8.0;

const char* kind_tag(EventKind k) {
    switch (k) {
        case EventKind::tone: return "tone";
        case EventKind::chirp: return "chirp";
        case EventKind::noise_burst: return "noise";
        case EventKind::click_train: return "clicks";
    }
    return "?";
}

int round_ds(double seconds) { return static_cast<int>(std::lround(seconds * 10.0)); }

}  // namespace

std::string signature_of(const Scene& scene) {
    std::string sig;
    for (const auto& e : scene.events) {
        if (!sig.empty()) sig += ',';
        sig += kind_tag(e.kind);
        if (e.pitch >= 0) {
            sig += ':';
            sig += std::to_string(e.pitch);
        }
        sig += '@';
        sig += std::to_string(round_ds(e.start));
        sig += '+';
        sig += std::to_string(round_ds(e.duration));
    }
    return sig;
}

double pitch_frequency(int pitch) {
    DAC_CHECK(pitch >= 0 && pitch <= 2, "pitch class ", pitch, " out of range");
    static const double freq[] = {220.0, 880.0, 3520.0};
    return freq[pitch];
}

void pitch_band(int pitch, double& lo, double& hi) {
    double f = pitch_frequency(pitch);
    lo = f / 2.0;
    hi = f * 2.0;
}

Waveform render_waveform(const Scene& scene, uint64_t seed, int sample_rate) {
    double end_prev = -1.0;
    for (const auto& e : scene.events) {
        DAC_CHECK(e.start > end_prev - 1e-9, "overlapping events in scene '", signature_of(scene),
                  "'");
        DAC_CHECK(e.start + e.duration <= kClipSeconds + 1e-9, "event extends past the ",
                  kClipSeconds, " s clip");
        end_prev = e.start + e.duration;
    }
    int total = static_cast<int>(std::lround(kClipSeconds * sample_rate));
    std::vector<double> buf(static_cast<size_t>(total), 0.0);
    Rng noise_rng(fold_seed(seed, 0x776176ull));
    for (const auto& e : scene.events) {
        int start = static_cast<int>(std::lround(e.start * sample_rate));
        int n = static_cast<int>(std::lround(e.duration * sample_rate));
        int fade = static_cast<int>(std::lround(kFadeSeconds * sample_rate));
        for (int i = 0; i < n && start + i < total; ++i) {
            double t = static_cast<double>(i) / sample_rate;
            double v = 0.0;
            switch (e.kind) {
                case EventKind::tone:
                    v = std::sin(2.0 * kPi * pitch_frequency(e.pitch) * t);
                    break;
                case EventKind::chirp: {
                    double lo, hi;
                    pitch_band(e.pitch, lo, hi);
                    // Linear sweep: phase = 2*pi*(lo*t + (hi-lo)*t^2/(2*dur)).
                    double phase = 2.0 * kPi * (lo * t + (hi - lo) * t * t / (2.0 * e.duration));
                    v = std::sin(phase);
                    break;
                }
                case EventKind::noise_burst:
                    v = 2.0 * noise_rng.uniform() - 1.0;
                    break;
                case EventKind::click_train: {
                    double period_pos = std::fmod(t, 1.0 / kClickRate);
                    v = period_pos < kClickWidth ? 1.0 : 0.0;
                    break;
                }
            }
            double env = 1.0;
            if (i < fade) env = static_cast<double>(i) / fade;
            if (n - 1 - i < fade) env = std::min(env, static_cast<double>(n - 1 - i) / fade);
            buf[static_cast<size_t>(start + i)] += e.amplitude * env * v;
        }
    }
    double peak = 0.0;
    for (double v : buf) peak = std::max(peak, std::abs(v));
    double gain = peak > 0.0 ? 0.9 / peak : 1.0;
    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(buf.size());
    for (size_t i = 0; i < buf.size(); ++i) w.samples[i] = static_cast<float>(buf[i] * gain);
    return w;
}

namespace {

const char* kPitchWord[] = {"low", "medium", "high"};

std::vector<std::string> clause_variants(const Event& e) {
    switch (e.kind) {
        case EventKind::tone:
            return {std::string("a ") + kPitchWord[e.pitch] + " pitched tone",
                    std::string("a ") + kPitchWord[e.pitch] + " tone"};
        case EventKind::chirp:
            return {std::string("a rising ") + kPitchWord[e.pitch] + " tone",
                    std::string("an upward ") + kPitchWord[e.pitch] + " sweep"};
        case EventKind::noise_burst:
            return {"a burst of static", "a burst of noise"};
        case EventKind::click_train:
            return {"a series of clicks", "a train of clicks"};
    }
    return {};
}

const std::vector<std::string>& connector_variants() {
    static const std::vector<std::string> cs = {"followed by", "then"};
    return cs;
}

}  // namespace

std::string caption_of(const Scene& scene, uint64_t seed) {
    Rng rng(fold_seed(seed, 0x636170ull));
    std::string out;
    for (size_t i = 0; i < scene.events.size(); ++i) {
        auto variants = clause_variants(scene.events[i]);
        const std::string& clause = variants[rng.below(variants.size())];
        if (i > 0) {
            const auto& cs = connector_variants();
            out += ' ' + cs[rng.below(cs.size())] + ' ';
        }
        out += clause;
    }
    return out;
}

std::vector<std::string> all_captions_of(const Scene& scene) {
    std::vector<std::string> acc = {""};
    for (size_t i = 0; i < scene.events.size(); ++i) {
        std::vector<std::string> next;
        auto variants = clause_variants(scene.events[i]);
        for (const auto& prefix : acc) {
            if (i == 0) {
                for (const auto& cl : variants) next.push_back(cl);
            } else {
                for (const auto& con : connector_variants())
                    for (const auto& cl : variants) next.push_back(prefix + ' ' + con + ' ' + cl);
            }
        }
        acc = std::move(next);
    }
    std::sort(acc.begin(), acc.end());
    acc.erase(std::unique(acc.begin(), acc.end()), acc.end());
    return acc;
}

namespace {

Scene sample_scene(Rng& rng) {
    Scene s;
    int n = 1 + static_cast<int>(rng.below(3));
    // Durations on the 0.1 s grid; 3 * 0.6 + 2 * 0.1 = 2.0 always fits.
    std::vector<int> dur_ds(static_cast<size_t>(n));
    int needed = 0;
    for (auto& d : dur_ds) {
        d = 3 + static_cast<int>(rng.below(4));  // 0.3 .. 0.6 s
        needed += d;
    }
    needed += (n - 1);  // minimum 0.1 s gap between events
    int slack = 20 - needed;
    int cursor = 0;
    for (int i = 0; i < n; ++i) {
        Event e;
        int kind = static_cast<int>(rng.below(4));
        e.kind = static_cast<EventKind>(kind);
        e.pitch = (e.kind == EventKind::tone || e.kind == EventKind::chirp)
                      ? static_cast<int>(rng.below(3))
                      : -1;
        int gap = static_cast<int>(rng.below(static_cast<uint64_t>(slack + 1)));
        slack -= gap;
        if (i > 0) cursor += 1;  // enforced minimum gap
        cursor += gap;
        e.start = cursor / 10.0;
        e.duration = dur_ds[static_cast<size_t>(i)] / 10.0;
        e.amplitude = 0.4 + 0.1 * static_cast<double>(rng.below(5));
        cursor += dur_ds[static_cast<size_t>(i)];
        s.events.push_back(e);
    }
    return s;
}

}  // namespace

namespace {

// Exact size of the signature space the sampler draws from: 8 kind/pitch
// combinations per event, durations 0.3..0.6 s and leading gaps on the 0.1 s
// grid with a mandatory 0.1 s separation inside the 2.0 s clip.
int64_t distinct_scene_space() {
    auto choose = [](int64_t n, int64_t k) {
        int64_t r = 1;
        for (int64_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
        return r;
    };
    int64_t total = 0;
    for (int n = 1; n <= 3; ++n) {
        int64_t kinds = 1;
        for (int i = 0; i < n; ++i) kinds *= 8;
        // Enumerate duration combinations in deciseconds.
        std::vector<int> dur(static_cast<size_t>(n), 3);
        while (true) {
            int sum = 0;
            for (int d : dur) sum += d;
            int slack = 20 - sum - (n - 1);
            if (slack >= 0) total += kinds * choose(slack + n, n);
            int i = n - 1;
            while (i >= 0 && dur[static_cast<size_t>(i)] == 6) {
                dur[static_cast<size_t>(i)] = 3;
                --i;
            }
            if (i < 0) break;
            dur[static_cast<size_t>(i)] += 1;
        }
    }
    return total;
}

}  // namespace

SynthDataset build_dataset(int n_train, int n_val, int n_test, uint64_t seed) {
    DAC_CHECK(n_train >= 1 && n_val >= 1 && n_test >= 1, "split sizes must be >= 1");
    DAC_CHECK(static_cast<int64_t>(n_train) + n_val + n_test <= distinct_scene_space(),
              "requested sizes exceed distinct-scene space (", distinct_scene_space(),
              " signatures)");
    SynthDataset ds;
    ds.seed = seed;
    Rng rng(fold_seed(seed, 0x7363656eull));
    std::set<std::string> seen;
    int total = n_train + n_val + n_test;
    std::vector<SynthItem> items;
    items.reserve(static_cast<size_t>(total));
    int consecutive_collisions = 0;
    while (static_cast<int>(items.size()) < total) {
        Scene s = sample_scene(rng);
        std::string sig = signature_of(s);
        if (!seen.insert(sig).second) {
            consecutive_collisions += 1;
            DAC_CHECK(consecutive_collisions < 20000,
                      "requested sizes exceed distinct-scene space (", total, " items)");
            continue;
        }
        consecutive_collisions = 0;
        SynthItem item;
        item.item_seed = seed + static_cast<uint64_t>(items.size());
        item.caption = caption_of(s, item.item_seed);
        item.scene = std::move(s);
        items.push_back(std::move(item));
    }
    ds.train.assign(items.begin(), items.begin() + n_train);
    ds.val.assign(items.begin() + n_train, items.begin() + n_train + n_val);
    ds.test.assign(items.begin() + n_train + n_val, items.end());
    return ds;
}

namespace {

void write_split(const std::vector<SynthItem>& items, const std::string& split,
                 const std::string& dir) {
    namespace fs = std::filesystem;
    std::ofstream manifest(dir + "/" + split + ".tsv");
    std::ofstream refs(dir + "/" + split + "_refs.tsv");
    DAC_CHECK(manifest.good() && refs.good(), "cannot write manifests under ", dir);
    for (size_t i = 0; i < items.size(); ++i) {
        std::ostringstream name;
        name << "wav/" << split << "_" << i << ".wav";
        write_wav(items[i].waveform(), dir + "/" + name.str());
        manifest << name.str() << '\t' << items[i].caption << '\t' << signature_of(items[i].scene)
                 << '\n';
        refs << name.str();
        for (const auto& ref : all_captions_of(items[i].scene)) refs << '\t' << ref;
        refs << '\n';
    }
    DAC_CHECK(manifest.good() && refs.good(), "short write of manifests under ", dir);
}

}  // namespace

void write_dataset_dir(const SynthDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir + "/wav");
    write_split(ds.train, "train", dir);
    write_split(ds.val, "val", dir);
    write_split(ds.test, "test", dir);
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
    std::ifstream f(path);
    DAC_CHECK(f.good(), "cannot read manifest ", path);
    std::vector<ManifestRow> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto t1 = line.find('\t');
        auto t2 = line.find('\t', t1 + 1);
        DAC_CHECK(t1 != std::string::npos && t2 != std::string::npos, "malformed manifest row: ",
                  line);
        rows.push_back(ManifestRow{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1),
                                   line.substr(t2 + 1)});
    }
    return rows;
}

}  // namespace dac
