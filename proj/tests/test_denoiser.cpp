#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "common.hpp"
#include "dac/training.hpp"

using namespace dac;

TEST_CASE("time_features: t=0, injectivity over 0..1000, reproducibility") {
    auto f0 = time_features<float>(0, 1000, 16);
    for (int i = 0; i < 8; ++i) {
        CHECK(f0.data[static_cast<size_t>(2 * i)] == 0.0f);      // sin terms
        CHECK(f0.data[static_cast<size_t>(2 * i + 1)] == 1.0f);  // cos terms
    }

    std::set<std::vector<float>> seen;
    for (int t = 0; t <= 1000; ++t) seen.insert(time_features<float>(t, 1000, 64).data);
    CHECK(seen.size() == 1001);

    CHECK(time_features<float>(7, 1000, 32).data == time_features<float>(7, 1000, 32).data);
    CHECK_THROWS_WITH_AS(time_features<float>(1001, 1000, 32), doctest::Contains("out of range"),
                         dac::runtime_error);
    CHECK_THROWS_AS(time_features<float>(-1, 1000, 32), dac::runtime_error);
}

TEST_CASE("cross_attention: single key collapses independently of the query") {
    ParamStore<float> ps;
    Rng rng(51);
    AttentionP attn = make_attention(ps, rng, "a", 8, 2, 0.3);
    Graph<float> g;
    auto x = g.constant(TensorF::randn({5, 8}, rng));
    auto audio = g.constant(TensorF::randn({1, 8}, rng));
    auto out = attention(g, ps, x, audio, attn);
    // Softmax over one key is 1 for every query: all output rows equal the
    // projected single V row.
    for (int64_t r = 1; r < 5; ++r)
        for (int64_t c = 0; c < 8; ++c)
            CHECK(g.value(out).at(r, c) == doctest::Approx(g.value(out).at(0, c)).epsilon(1e-6));

    // Hand path: v = audio Wv + bv, then Wo + bo.
    Graph<float> h;
    auto v = linear(h, ps, h.constant(g.value(audio)), attn.v);
    auto expect = linear(h, ps, v, attn.o);
    for (int64_t c = 0; c < 8; ++c)
        CHECK(g.value(out).at(0, c) == doctest::Approx(h.value(expect).at(0, c)).epsilon(1e-6));
}

TEST_CASE("cross_attention: zero K projection gives uniform attention") {
    ParamStore<float> ps;
    Rng rng(53);
    AttentionP attn = make_attention(ps, rng, "a", 8, 2, 0.3);
    std::fill(ps[attn.k.w].value.data.begin(), ps[attn.k.w].value.data.end(), 0.0f);
    Graph<float> g;
    auto x = g.constant(TensorF::randn({4, 8}, rng));
    TensorF audio = TensorF::randn({6, 8}, rng);
    auto out = attention(g, ps, x, g.constant(audio), attn);

    // Expected: mean of projected V rows through the output projection.
    Graph<float> h;
    auto vrows = linear(h, ps, h.constant(audio), attn.v);
    TensorF mean({1, 8});
    for (int64_t c = 0; c < 8; ++c) {
        float acc = 0;
        for (int64_t r = 0; r < 6; ++r) acc += h.value(vrows).at(r, c);
        mean.at(0, c) = acc / 6.0f;
    }
    auto expect = linear(h, ps, h.constant(mean), attn.o);
    for (int64_t r = 0; r < 4; ++r)
        for (int64_t c = 0; c < 8; ++c)
            CHECK(g.value(out).at(r, c) == doctest::Approx(h.value(expect).at(0, c)).epsilon(1e-5));
}

TEST_CASE("cross_attention: scalar-head hand value, weights [0.25, 0.75] at score gap ln 3") {
    ParamStore<float> ps;
    Rng rng(55);
    AttentionP attn = make_attention(ps, rng, "a", 1, 1, 0.3);
    ps[attn.q.w].value = TensorF({1, 1}, {1.0f});
    ps[attn.q.b].value = TensorF({1}, {0.0f});
    ps[attn.k.w].value = TensorF({1, 1}, {1.0f});
    ps[attn.v.w].value = TensorF({1, 1}, {1.0f});
    ps[attn.v.b].value = TensorF({1}, {0.0f});
    ps[attn.o.w].value = TensorF({1, 1}, {1.0f});
    ps[attn.o.b].value = TensorF({1}, {0.0f});

    Graph<float> g;
    auto x = g.constant(TensorF({1, 1}, {1.0f}));
    float ln3 = std::log(3.0f);
    auto audio = g.constant(TensorF({2, 1}, {0.0f, ln3}));
    auto out = attention(g, ps, x, audio, attn);
    // weights [0.25, 0.75] over values [0, ln3] -> 0.75 * ln3.
    CHECK(g.value(out).at(0, 0) == doctest::Approx(0.75f * ln3).epsilon(1e-6));

    auto empty = g.constant(TensorF({0, 1}));
    CHECK_THROWS_WITH_AS(attention(g, ps, x, empty, attn), doctest::Contains("empty conditioning"),
                         dac::runtime_error);
}

namespace {

CaptionModel<float> small_model(Variant variant, int L = 8, int D = 16) {
    CaptionModel<float> m;
    m.codec_cfg.max_len = L;
    m.codec_cfg.embed_dim = D;
    m.codec_cfg.transition_layers = 1;
    m.audio_cfg.width = D;
    m.audio_cfg.proj_dim = D;
    m.audio_cfg.heads = 2;
    m.audio_cfg.blocks = 1;
    m.audio_cfg.conv1_channels = 2;
    m.audio_cfg.conv2_channels = 4;
    m.dn_cfg.variant = variant;
    m.dn_cfg.width = D;
    m.dn_cfg.heads = 2;
    m.dn_cfg.blocks = 2;
    m.dn_cfg.max_len = L;
    m.dn_cfg.time_embed_dim = 8;
    m.vocab_size = 12;
    m.init(1234);
    return m;
}

}  // namespace

TEST_CASE("denoise: output shape LxD for both variants, deterministic, null path differs") {
    for (Variant v : {Variant::dit, Variant::uvit}) {
        auto m = small_model(v);
        Rng rng(61);
        TensorF x_t = TensorF::randn({8, 16}, rng);
        TensorF audio = TensorF::randn({3, 16}, rng);

        TensorF out1 = m.denoise_value(x_t, 10, 50, &audio);
        CHECK(out1.shape == std::vector<int64_t>{8, 16});
        CHECK(out1.all_finite());

        TensorF out2 = m.denoise_value(x_t, 10, 50, &audio);
        CHECK(out1.data == out2.data);

        TensorF null_out = m.denoise_value(x_t, 10, 50, nullptr);
        CHECK(null_out.shape == out1.shape);
        bool differs = false;
        for (int64_t i = 0; i < out1.numel(); ++i)
            if (out1.data[i] != null_out.data[i]) differs = true;
        CHECK(differs);
    }
}

TEST_CASE("denoise: shape mismatch raises") {
    auto m = small_model(Variant::dit);
    Rng rng(62);
    TensorF wrong = TensorF::randn({4, 16}, rng);
    CHECK_THROWS_WITH_AS(m.denoise_value(wrong, 5, 50, nullptr),
                         doctest::Contains("shape mismatch"), dac::runtime_error);
}

TEST_CASE("uvit: zeroed skip projections equal the same stack without skips") {
    auto m = small_model(Variant::uvit);
    // Identity on the running half, zero on the skip half, zero bias.
    for (auto& sp : m.denoiser.skip_proj) {
        auto& w = m.params[sp.w].value;
        std::fill(w.data.begin(), w.data.end(), 0.0f);
        for (int d = 0; d < 16; ++d) w.at(d, d) = 1.0f;
        auto& b = m.params[sp.b].value;
        std::fill(b.data.begin(), b.data.end(), 0.0f);
    }
    Rng rng(63);
    TensorF x_t = TensorF::randn({8, 16}, rng);
    TensorF audio = TensorF::randn({3, 16}, rng);
    TensorF with_skips = m.denoise_value(x_t, 7, 50, &audio);

    // Reference: the same blocks run sequentially with no skip projections.
    Graph<float> g;
    auto cond = g.constant(audio);
    auto temb = time_embedding(g, m.params, m.denoiser, m.dn_cfg, 7, 50);
    auto h = g.add(g.constant(x_t), g.param(m.params, m.denoiser.pos_embed));
    for (const auto& blk : m.denoiser.blocks) h = block_forward(g, m.params, h, blk, cond, temb);
    auto ref = linear(g, m.params, layer_norm(g, m.params, h, m.denoiser.final_ln),
                      m.denoiser.out_proj);
    for (int64_t i = 0; i < with_skips.numel(); ++i)
        CHECK(with_skips.data[i] == doctest::Approx(g.value(ref).data[i]).epsilon(1e-6));
}

TEST_CASE("cross-attention conditioning is set-like: audio row permutation invariance") {
    auto m = small_model(Variant::dit);
    Rng rng(64);
    TensorF x_t = TensorF::randn({8, 16}, rng);
    TensorF audio = TensorF::randn({5, 16}, rng);
    TensorF permuted({5, 16});
    int perm[5] = {3, 0, 4, 2, 1};
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 16; ++c) permuted.at(r, c) = audio.at(perm[r], c);

    TensorF a = m.denoise_value(x_t, 9, 50, &audio);
    TensorF b = m.denoise_value(x_t, 9, 50, &permuted);
    for (int64_t i = 0; i < a.numel(); ++i)
        CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-6));
}

TEST_CASE("gradcheck: full denoiser (dit) against finite differences") {
    CaptionModel<double> m;
    m.codec_cfg.max_len = 4;
    m.codec_cfg.embed_dim = 8;
    m.codec_cfg.transition_layers = 1;
    m.audio_cfg.width = 8;
    m.audio_cfg.proj_dim = 8;
    m.audio_cfg.heads = 2;
    m.audio_cfg.blocks = 1;
    m.dn_cfg.width = 8;
    m.dn_cfg.heads = 2;
    m.dn_cfg.blocks = 1;
    m.dn_cfg.max_len = 4;
    m.dn_cfg.time_embed_dim = 8;
    m.vocab_size = 6;
    m.init(87);
    Rng rng(88);
    for (auto& e : m.params.entries) {
        bool is_weight = e.name.size() > 2 && e.name.compare(e.name.size() - 2, 2, ".w") == 0;
        if (is_weight && e.name.find("skip") == std::string::npos)
            e.value = TensorD::randn(e.value.shape, rng, 0.3);
    }
    TensorD x_t = TensorD::randn({4, 8}, rng);
    TensorD audio = TensorD::randn({3, 8}, rng);
    double err = dac::testing::max_rel_grad_err(m.params, [&](Graph<double>& g) {
        auto out = m.denoise_node(g, g.constant(x_t), 5, 50, g.constant(audio));
        return dac::testing::probe_loss(g, out, 970);
    });
    CHECK(err <= 1e-4);
}

TEST_CASE("gradients reach every named parameter, including the null row (uvit)") {
    auto m = small_model(Variant::uvit);
    NoiseSchedule sched = build_schedule(50, 1e-4, 0.02);

    Rng rng(91);
    Waveform w;
    w.samples.resize(kClipSamples);
    for (auto& s : w.samples) s = static_cast<float>(0.2 * rng.normal());
    TensorF mel = mel_spectrogram(w, m.audio_cfg.mel);

    std::vector<TrainItem> items(6);
    for (size_t i = 0; i < items.size(); ++i) {
        TokenSeq s;
        s.ids.assign(8, Vocab::PAD);
        s.valid.assign(8, 0);
        s.ids[0] = Vocab::BOS;
        s.valid[0] = 1;
        for (int p = 1; p <= 4; ++p) {
            s.ids[static_cast<size_t>(p)] = 4 + static_cast<int>(rng.below(8));
            s.valid[static_cast<size_t>(p)] = 1;
        }
        s.ids[5] = Vocab::EOS;
        s.valid[5] = 1;
        items[i].tokens = s;
        items[i].mel = mel;
    }

    std::vector<double> max_grad(static_cast<size_t>(m.params.size()), 0.0);
    LossWeights lw{1.0, 1.0, 0.1};
    for (int step = 0; step < 6; ++step) {
        m.params.zero_grads();
        std::vector<const TrainItem*> batch;
        for (const auto& it : items) batch.push_back(&it);
        batch_loss(m, sched, batch, lw, 0.5, 0.1f, fold_seed(5, static_cast<uint64_t>(step)), 2,
                   /*do_backward=*/true);
        for (int p = 0; p < m.params.size(); ++p)
            for (float v : m.params[p].grad.data)
                max_grad[static_cast<size_t>(p)] =
                    std::max(max_grad[static_cast<size_t>(p)], static_cast<double>(std::abs(v)));
    }
    for (int p = 0; p < m.params.size(); ++p) {
        INFO("parameter ", m.params[p].name);
        CHECK(max_grad[static_cast<size_t>(p)] > 0.0);
    }
}
