#pragma once

#include <string>
#include <vector>

#include "dac/audio.hpp"

namespace dac {

enum class EventKind { tone, chirp, noise_burst, click_train };

// pitch class indices: 0 low, 1 mid, 2 high (tone/chirp only).
struct Event {
    EventKind kind = EventKind::tone;
    int pitch = -1;
    double start = 0.0;     // seconds
    double duration = 0.0;  // seconds
    double amplitude = 0.6;
};

struct Scene {
    std::vector<Event> events;
};

// Content + timing on a 0.1 s grid; the split-disjointness key.
std::string signature_of(const Scene& scene);

// Tone frequencies per pitch class and the sweep band for chirps.
double pitch_frequency(int pitch);
void pitch_band(int pitch, double& lo, double& hi);

// Renders the summed events: fixed sines, linear sweeps, seeded uniform
// noise, 10 ms click pulses at 8 Hz; 5 ms linear fades per event; peak
// normalized to 0.9. Errors on overlapping events.
Waveform render_waveform(const Scene& scene, uint64_t seed, int sample_rate = kSampleRate);

// One clause per event with seeded synonym choices, joined by seeded
// connector draws.
std::string caption_of(const Scene& scene, uint64_t seed);

// Every surface form the grammar admits for this scene (synonym product).
std::vector<std::string> all_captions_of(const Scene& scene);

struct SynthItem {
    Scene scene;
    std::string caption;
    uint64_t item_seed = 0;  // dataset seed + global index

    Waveform waveform() const { return render_waveform(scene, item_seed); }
};

struct SynthDataset {
    uint64_t seed = 0;
    std::vector<SynthItem> train, val, test;
};

// Scenes sampled without cross-split signature collisions; deterministic in
// seed. Errors when the distinct-scene space cannot cover the request.
SynthDataset build_dataset(int n_train, int n_val, int n_test, uint64_t seed);

// ---- on-disk layout: wav/ + <split>.tsv manifests + <split>_refs.tsv ---------

struct ManifestRow {
    std::string wav_path;  // relative to the dataset dir
    std::string caption;
    std::string signature;
};

void write_dataset_dir(const SynthDataset& ds, const std::string& dir);
std::vector<ManifestRow> read_manifest(const std::string& path);

}  // namespace dac
