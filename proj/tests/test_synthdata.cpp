#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "dac/synthdata.hpp"
#include "dac/text_codec.hpp"

using namespace dac;

namespace {

Scene single(EventKind kind, int pitch, double start = 0.2, double dur = 0.5) {
    Scene s;
    Event e;
    e.kind = kind;
    e.pitch = pitch;
    e.start = start;
    e.duration = dur;
    e.amplitude = 0.6;
    s.events.push_back(e);
    return s;
}

}  // namespace

TEST_CASE("render: silence outside events, determinism, overlap error") {
    Scene s = single(EventKind::tone, 1, 0.5, 0.4);
    Waveform w = render_waveform(s, 42);
    REQUIRE(w.samples.size() == 32000);
    for (int i = 0; i < 7900; ++i) CHECK(w.samples[static_cast<size_t>(i)] == 0.0f);
    for (int i = 14500; i < 32000; ++i) CHECK(w.samples[static_cast<size_t>(i)] == 0.0f);
    float peak = 0;
    for (float v : w.samples) peak = std::max(peak, std::abs(v));
    CHECK(peak == doctest::Approx(0.9f).epsilon(1e-4));

    Waveform w2 = render_waveform(s, 42);
    CHECK(w.samples == w2.samples);

    Scene bad = s;
    Event e2;
    e2.kind = EventKind::noise_burst;
    e2.start = 0.6;  // overlaps the first event
    e2.duration = 0.3;
    bad.events.push_back(e2);
    CHECK_THROWS_WITH_AS(render_waveform(bad, 1), doctest::Contains("overlap"),
                         dac::runtime_error);
}

TEST_CASE("render: mid tone dominates the 880 Hz mel band during the event") {
    Scene s = single(EventKind::tone, 1, 0.0, 2.0);
    Waveform w = render_waveform(s, 7);
    MelConfig mc;
    TensorF mel = mel_spectrogram(w, mc);
    auto fb = mel_filterbank(mc, kSampleRate);
    int bin = static_cast<int>(std::lround(880.0 * mc.n_fft / kSampleRate));
    int band = 0;
    double best = -1;
    for (int b = 0; b < mc.bands; ++b)
        if (fb[static_cast<size_t>(b)][static_cast<size_t>(bin)] > best) {
            best = fb[static_cast<size_t>(b)][static_cast<size_t>(bin)];
            band = b;
        }
    int hits = 0;
    for (int64_t f = 0; f < mel.rows(); ++f) {
        int arg = 0;
        for (int64_t b = 1; b < mel.cols(); ++b)
            if (mel.at(f, b) > mel.at(f, arg)) arg = static_cast<int>(b);
        hits += (arg == band);
    }
    CHECK(static_cast<double>(hits) / static_cast<double>(mel.rows()) >= 0.95);
}

TEST_CASE("caption grammar: single-clause templates and connector arity") {
    Scene high = single(EventKind::tone, 2);
    auto variants = all_captions_of(high);
    CHECK(std::find(variants.begin(), variants.end(), "a high pitched tone") != variants.end());
    CHECK(variants.size() == 2);

    // caption_of always emits one of the grammar's surface forms.
    for (uint64_t seed = 0; seed < 16; ++seed) {
        std::string c = caption_of(high, seed);
        CHECK(std::find(variants.begin(), variants.end(), c) != variants.end());
    }

    Scene two = single(EventKind::noise_burst, -1, 0.1, 0.4);
    Event e2;
    e2.kind = EventKind::click_train;
    e2.start = 0.8;
    e2.duration = 0.5;
    two.events.push_back(e2);
    for (uint64_t seed = 0; seed < 8; ++seed) {
        std::string c = caption_of(two, seed);
        int connectors = 0;
        size_t pos = 0;
        while ((pos = c.find("followed by", pos)) != std::string::npos) {
            connectors++;
            pos += 11;
        }
        pos = 0;
        while ((pos = c.find("then", pos)) != std::string::npos) {
            connectors++;
            pos += 4;
        }
        CHECK(connectors == 1);
    }

    // Pure function of (scene, seed).
    CHECK(caption_of(two, 5) == caption_of(two, 5));
}

TEST_CASE("grammar terminal set stays small and captions stay short") {
    SynthDataset ds = build_dataset(200, 20, 20, 99);
    std::vector<std::string> corpus;
    std::set<std::string> words;
    size_t max_words = 0;
    for (const auto& item : ds.train) {
        corpus.push_back(item.caption);
        auto toks = normalize_words(item.caption);
        max_words = std::max(max_words, toks.size());
        for (auto& t : toks) words.insert(t);
    }
    CHECK(words.size() <= 60);
    CHECK(max_words <= 20);

    // Every caption tokenizes without UNK under the train vocab.
    Vocab v = build_vocab(corpus);
    for (const auto& split : {ds.val, ds.test}) {
        for (const auto& item : split) {
            TokenSeq seq = tokenize(item.caption, v, 40);
            for (int id : seq.ids) CHECK(id != Vocab::UNK);
        }
    }
}

TEST_CASE("build_dataset: determinism, split sizes, pairwise-disjoint signatures") {
    SynthDataset a = build_dataset(50, 10, 10, 123);
    SynthDataset b = build_dataset(50, 10, 10, 123);
    CHECK(a.train.size() == 50);
    CHECK(a.val.size() == 10);
    CHECK(a.test.size() == 10);
    for (size_t i = 0; i < a.train.size(); ++i) {
        CHECK(signature_of(a.train[i].scene) == signature_of(b.train[i].scene));
        CHECK(a.train[i].caption == b.train[i].caption);
    }
    auto sigs = [](const std::vector<SynthItem>& items) {
        std::set<std::string> s;
        for (const auto& it : items) s.insert(signature_of(it.scene));
        return s;
    };
    auto st = sigs(a.train), sv = sigs(a.val), se = sigs(a.test);
    CHECK(st.size() == a.train.size());
    for (const auto& s : sv) CHECK(st.count(s) == 0);
    for (const auto& s : se) {
        CHECK(st.count(s) == 0);
        CHECK(sv.count(s) == 0);
    }

    CHECK_THROWS_WITH_AS(build_dataset(2000000, 1, 1, 5),
                         doctest::Contains("exceed distinct-scene space"), dac::runtime_error);
}

TEST_CASE("dataset round trip through the on-disk layout") {
    namespace fs = std::filesystem;
    SynthDataset ds = build_dataset(4, 2, 2, 7);
    std::string dir = "synth_dataset_test";
    write_dataset_dir(ds, dir);
    auto rows = read_manifest(dir + "/train.tsv");
    REQUIRE(rows.size() == 4);
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].caption == ds.train[i].caption);
        CHECK(rows[i].signature == signature_of(ds.train[i].scene));
        Waveform w = read_wav(dir + "/" + rows[i].wav_path);
        CHECK(w.samples.size() == 32000);
    }
    // refs file: first column is the wav, remaining columns all grammar variants.
    std::ifstream refs(dir + "/train_refs.tsv");
    std::string line;
    std::getline(refs, line);
    CHECK(line.find('\t') != std::string::npos);
    CHECK(line.find(rows[0].wav_path) == 0);
    fs::remove_all(dir);
}
