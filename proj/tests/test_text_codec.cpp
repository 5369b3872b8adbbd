#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "common.hpp"
#include "dac/training.hpp"

using namespace dac;

TEST_CASE("build_vocab counts, determinism, case folding") {
    Vocab v = build_vocab({"a dog barks"});
    CHECK(v.size() == 4 + 3);
    Vocab v2 = build_vocab({"a dog barks"});
    CHECK(v.words == v2.words);

    Vocab folded = build_vocab({"Dog chases", "the dog"});
    CHECK(folded.ids.count("dog") == 1);
    int dogs = 0;
    for (const auto& w : folded.words) dogs += (w == "dog");
    CHECK(dogs == 1);

    CHECK_THROWS_WITH_AS(build_vocab({}), doctest::Contains("empty corpus"), dac::runtime_error);
}

TEST_CASE("build_vocab id order: frequency desc then lexicographic") {
    Vocab v = build_vocab({"b b c a a a", "c b"});
    // a:3, b:3, c:2 -> a, b, c after reserved ids.
    CHECK(v.words == std::vector<std::string>{"a", "b", "c"});
    CHECK(v.id_of("a") == 4);
    CHECK(v.id_of("b") == 5);
    CHECK(v.id_of("c") == 6);
}

TEST_CASE("tokenize: empty, known words, unknown words, truncation") {
    Vocab v = build_vocab({"a dog barks"});
    int L = 8;

    TokenSeq empty = tokenize("", v, L);
    CHECK(empty.ids[0] == Vocab::BOS);
    CHECK(empty.ids[1] == Vocab::EOS);
    for (int i = 2; i < L; ++i) CHECK(empty.ids[static_cast<size_t>(i)] == Vocab::PAD);
    CHECK(empty.valid_count() == 2);

    TokenSeq s = tokenize("a dog barks", v, L);
    CHECK(s.ids[0] == Vocab::BOS);
    CHECK(s.ids[1] == v.id_of("a"));
    CHECK(s.ids[2] == v.id_of("dog"));
    CHECK(s.ids[3] == v.id_of("barks"));
    CHECK(s.ids[4] == Vocab::EOS);
    CHECK(s.ids[5] == Vocab::PAD);
    CHECK(s.valid == std::vector<uint8_t>{1, 1, 1, 1, 1, 0, 0, 0});

    TokenSeq unk = tokenize("xylophone", v, L);
    CHECK(unk.ids[1] == Vocab::UNK);
    CHECK(unk.ids[2] == Vocab::EOS);

    TokenSeq trunc = tokenize("a a a a a a a a a a", v, 6);
    CHECK(trunc.length() == 6);
    CHECK(trunc.ids[5] == Vocab::EOS);
    CHECK(trunc.valid_count() == 6);
}

TEST_CASE("detokenize: roundtrip, empty, no-EOS, bad id") {
    Vocab v = build_vocab({"a dog barks loudly at night"});
    std::string text = "a dog barks at night";
    CHECK(detokenize(tokenize(text, v, 40), v) == text);

    TokenSeq empty = tokenize("", v, 8);
    CHECK(detokenize(empty, v) == "");

    TokenSeq no_eos;
    no_eos.ids = {Vocab::BOS, v.id_of("dog"), v.id_of("barks"), Vocab::PAD};
    no_eos.valid = {1, 1, 1, 0};
    CHECK(detokenize(no_eos, v) == "dog barks");

    TokenSeq bad;
    bad.ids = {Vocab::BOS, 999, Vocab::EOS};
    bad.valid = {1, 1, 1};
    CHECK_THROWS_WITH_AS(detokenize(bad, v), doctest::Contains("out of range"),
                         dac::runtime_error);

    TokenSeq unk;
    unk.ids = {Vocab::BOS, Vocab::UNK, Vocab::EOS};
    unk.valid = {1, 1, 1};
    CHECK(detokenize(unk, v) == "<unk>");
}

TEST_CASE("vocab file and line roundtrips") {
    Vocab v = build_vocab({"a dog barks loudly"});
    std::string path = "vocab_roundtrip_test.txt";
    save_vocab(v, path);
    Vocab loaded = load_vocab(path);
    CHECK(loaded.words == v.words);
    CHECK(loaded.size() == v.size());
    std::remove(path.c_str());

    Vocab line = vocab_from_line(vocab_to_line(v));
    CHECK(line.words == v.words);
}

namespace {

CaptionModel<float> tiny_model(int vocab_size, int transition_layers = 2, int max_len = 8,
                               int width = 16) {
    CaptionModel<float> m;
    m.codec_cfg.max_len = max_len;
    m.codec_cfg.embed_dim = width;
    m.codec_cfg.transition_layers = transition_layers;
    m.audio_cfg.width = width;
    m.audio_cfg.proj_dim = width;
    m.audio_cfg.heads = 2;
    m.dn_cfg.width = width;
    m.dn_cfg.heads = 2;
    m.dn_cfg.blocks = 2;
    m.dn_cfg.max_len = max_len;
    m.dn_cfg.time_embed_dim = 8;
    m.vocab_size = vocab_size;
    m.init(77);
    return m;
}

}  // namespace

TEST_CASE("embed: sigma0=0 is an exact table lookup; seeded noise is deterministic") {
    auto m = tiny_model(10);
    Vocab v;  // ids only matter
    TokenSeq seq;
    seq.ids = {1, 4, 5, 2, 0, 0, 0, 0};
    seq.valid = {1, 1, 1, 1, 0, 0, 0, 0};

    Graph<float> g;
    auto x = m.embed(g, seq, 0.0f, nullptr);
    const auto& table = m.params[m.codec.embed_table].value;
    for (int i = 0; i < 8; ++i)
        for (int c = 0; c < 16; ++c)
            CHECK(g.value(x).at(i, c) == table.at(seq.ids[static_cast<size_t>(i)], c));

    Rng r1(99), r2(99);
    Graph<float> g1, g2;
    auto a = m.embed(g1, seq, 0.1f, &r1);
    auto b = m.embed(g2, seq, 0.1f, &r2);
    CHECK(g1.value(a).data == g2.value(b).data);
}

TEST_CASE("embed: noise sample variance matches sigma0^2 within 5%") {
    auto m = tiny_model(10, 2, 40, 128);
    TokenSeq seq;
    seq.ids.assign(40, 4);
    seq.valid.assign(40, 1);
    double sigma0 = 0.3;
    Rng rng(123);
    double acc = 0.0;
    int64_t n = 0;
    const auto& table = m.params[m.codec.embed_table].value;
    for (int rep = 0; rep < 2; ++rep) {
        Graph<float> g;
        auto x = m.embed(g, seq, static_cast<float>(sigma0), &rng);
        for (int64_t i = 0; i < 40; ++i)
            for (int64_t c = 0; c < 128; ++c) {
                double d = g.value(x).at(i, c) - table.at(4, c);
                acc += d * d;
                n += 1;
            }
    }
    double var = acc / static_cast<double>(n);
    CHECK(var == doctest::Approx(sigma0 * sigma0).epsilon(0.05));
}

TEST_CASE("round_latent: logits shape and per-position factorization with identity transition") {
    auto m = tiny_model(12, /*transition_layers=*/0);
    Rng rng(5);
    TensorF x0 = TensorF::randn({8, 16}, rng);

    Graph<float> g;
    TensorF logits;
    TokenSeq seq = round_latent(g, m.params, m.codec, g.constant(x0), &logits);
    CHECK(logits.shape == std::vector<int64_t>{8, 12});
    CHECK(seq.length() == 8);

    // Changing row 3 leaves argmax at other positions unchanged.
    TensorF x1 = x0;
    for (int c = 0; c < 16; ++c) x1.at(3, c) += 5.0f * static_cast<float>(c % 3) - 2.0f;
    Graph<float> g2;
    TensorF logits2;
    round_latent(g2, m.params, m.codec, g2.constant(x1), &logits2);
    for (int i = 0; i < 8; ++i) {
        if (i == 3) continue;
        for (int c = 0; c < 12; ++c) CHECK(logits.at(i, c) == logits2.at(i, c));
    }
}

TEST_CASE("round_latent: valid mask derives from the first predicted EOS") {
    TensorF logits = TensorF::zeros({5, 6});
    logits.at(0, Vocab::BOS) = 5;
    logits.at(1, 4) = 5;
    logits.at(2, Vocab::EOS) = 5;
    logits.at(3, 5) = 5;  // after EOS: must be forced to PAD
    logits.at(4, Vocab::EOS) = 5;
    TokenSeq seq = decode_logits(logits);
    CHECK(seq.ids == std::vector<int>{Vocab::BOS, 4, Vocab::EOS, Vocab::PAD, Vocab::PAD});
    CHECK(seq.valid == std::vector<uint8_t>{1, 1, 1, 0, 0});

    TensorF no_eos = TensorF::zeros({3, 6});
    no_eos.at(0, 4) = 5;
    no_eos.at(1, 4) = 5;
    no_eos.at(2, 5) = 5;
    TokenSeq all = decode_logits(no_eos);
    CHECK(all.valid == std::vector<uint8_t>{1, 1, 1});
}

TEST_CASE("trained roundtrip: 200-word vocab codec pretraining reaches 99% token accuracy") {
    // Synthetic 200-word vocabulary and random captions.
    std::vector<std::string> words;
    for (int i = 0; i < 200; ++i) words.push_back("w" + std::to_string(i));
    Vocab v;
    for (const auto& w : words) {
        v.ids.emplace(w, v.size());
        v.words.push_back(w);
    }

    const int L = 12, D = 64;
    CaptionModel<float> m;
    m.codec_cfg.max_len = L;
    m.codec_cfg.embed_dim = D;
    m.codec_cfg.transition_layers = 2;
    m.audio_cfg.width = D;
    m.audio_cfg.proj_dim = D;
    m.audio_cfg.heads = 2;
    m.audio_cfg.blocks = 1;
    m.dn_cfg.width = D;
    m.dn_cfg.heads = 2;
    m.dn_cfg.blocks = 2;
    m.dn_cfg.max_len = L;
    m.dn_cfg.time_embed_dim = 16;
    m.vocab_size = v.size();
    m.init(2024);

    auto random_seq = [&](Rng& rng) {
        int n = 4 + static_cast<int>(rng.below(static_cast<uint64_t>(L - 2 - 4 + 1)));
        TokenSeq s;
        s.ids.assign(L, Vocab::PAD);
        s.valid.assign(L, 0);
        s.ids[0] = Vocab::BOS;
        s.valid[0] = 1;
        for (int i = 1; i <= n; ++i) {
            s.ids[static_cast<size_t>(i)] = Vocab::RESERVED + static_cast<int>(rng.below(200));
            s.valid[static_cast<size_t>(i)] = 1;
        }
        s.ids[static_cast<size_t>(n + 1)] = Vocab::EOS;
        s.valid[static_cast<size_t>(n + 1)] = 1;
        return s;
    };

    NoiseSchedule sched = build_schedule(50, 1e-4, 0.02);
    AdamState<float> opt;
    opt.init(m.params);
    LossWeights lw{0.0, 1.0, 0.1};
    Rng data_rng(31);
    std::vector<TrainItem> pool(512);
    for (auto& it : pool) it.tokens = random_seq(data_rng);
    const int batch = 16;
    for (int step = 0; step < 260; ++step) {
        std::vector<const TrainItem*> b;
        for (int k = 0; k < batch; ++k)
            b.push_back(&pool[static_cast<size_t>((step * batch + k) % pool.size())]);
        batch_loss(m, sched, b, lw, 0.0, 0.1f, fold_seed(42, static_cast<uint64_t>(step)), 2,
                   /*do_backward=*/true, /*codec_only=*/true);
        train_step(m.params, opt, 2e-3);
    }

    int correct = 0, total = 0;
    Rng held_rng(777);
    for (int i = 0; i < 64; ++i) {
        TokenSeq truth = random_seq(held_rng);
        Graph<float> g;
        auto x0 = m.embed(g, truth, 0.0f, nullptr);
        TokenSeq round = round_latent(g, m.params, m.codec, x0);
        for (int p = 0; p < L; ++p) {
            if (!truth.valid[static_cast<size_t>(p)]) continue;
            total += 1;
            correct += round.ids[static_cast<size_t>(p)] == truth.ids[static_cast<size_t>(p)];
        }
    }
    double acc = static_cast<double>(correct) / total;
    MESSAGE("codec roundtrip accuracy: ", acc);
    CHECK(acc >= 0.99);
}
