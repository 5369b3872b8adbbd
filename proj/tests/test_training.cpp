#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "common.hpp"
#include "dac/training.hpp"

using namespace dac;

TEST_CASE("lr_at: warmup interpolation") {
    CHECK(lr_at(0, 1e-4, 200) == 0.0);
    CHECK(lr_at(100, 1e-4, 200) == doctest::Approx(5e-5));
    CHECK(lr_at(200, 1e-4, 200) == doctest::Approx(1e-4));
    CHECK(lr_at(5000, 1e-4, 200) == doctest::Approx(1e-4));
    CHECK(lr_at(3, 1e-4, 0) == doctest::Approx(1e-4));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamStore<float> ps;
    int p = ps.add("p", TensorF({2, 2}, {1, 2, 3, 4}));
    AdamState<float> opt;
    opt.init(ps);
    train_step(ps, opt, 1e-3);
    CHECK(ps[p].value.data == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("adam: first-step update with unit gradient is ~ -lr") {
    ParamStore<float> ps;
    int p = ps.add("p", TensorF({1}, {0.5f}));
    AdamState<float> opt;
    opt.init(ps);
    ps[p].grad.data[0] = 1.0f;
    train_step(ps, opt, 1e-2);
    // Bias-corrected moments cancel at step 1: update = lr * g / (|g| + eps).
    CHECK(ps[p].value.data[0] == doctest::Approx(0.5 - 1e-2).epsilon(1e-6));
    // Gradients were zeroed by the step.
    CHECK(ps[p].grad.data[0] == 0.0f);
}

TEST_CASE("adam: NaN gradients abort the step with the parameter name") {
    ParamStore<float> ps;
    ps.add("layer.w", TensorF({2}, {1, 2}));
    AdamState<float> opt;
    opt.init(ps);
    ps[0].grad.data[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(train_step(ps, opt, 1e-3), doctest::Contains("layer.w"),
                         dac::runtime_error);
}

namespace {

CaptionModel<float> tiny_model(uint64_t seed = 11, Variant variant = Variant::dit) {
    CaptionModel<float> m;
    m.codec_cfg.max_len = 8;
    m.codec_cfg.embed_dim = 16;
    m.codec_cfg.transition_layers = 1;
    m.audio_cfg.width = 16;
    m.audio_cfg.proj_dim = 16;
    m.audio_cfg.heads = 2;
    m.audio_cfg.blocks = 1;
    m.audio_cfg.conv1_channels = 2;
    m.audio_cfg.conv2_channels = 4;
    m.dn_cfg.variant = variant;
    m.dn_cfg.width = 16;
    m.dn_cfg.heads = 2;
    m.dn_cfg.blocks = 2;
    m.dn_cfg.max_len = 8;
    m.dn_cfg.time_embed_dim = 8;
    m.vocab_size = 12;
    m.init(seed);
    return m;
}

std::vector<TrainItem> tiny_items(int n, uint64_t seed) {
    Rng rng(seed);
    Waveform w;
    w.samples.resize(kClipSamples);
    for (auto& s : w.samples) s = static_cast<float>(0.1 * rng.normal());
    TensorF mel = mel_spectrogram(w);
    std::vector<TrainItem> items(static_cast<size_t>(n));
    for (auto& it : items) {
        TokenSeq s;
        s.ids.assign(8, Vocab::PAD);
        s.valid.assign(8, 0);
        s.ids[0] = Vocab::BOS;
        s.valid[0] = 1;
        int len = 3 + static_cast<int>(rng.below(3));
        for (int p = 1; p <= len; ++p) {
            s.ids[static_cast<size_t>(p)] = 4 + static_cast<int>(rng.below(8));
            s.valid[static_cast<size_t>(p)] = 1;
        }
        s.ids[static_cast<size_t>(len + 1)] = Vocab::EOS;
        s.valid[static_cast<size_t>(len + 1)] = 1;
        it.tokens = s;
        it.mel = mel;
    }
    return items;
}

std::vector<const TrainItem*> ptrs(const std::vector<TrainItem>& items) {
    std::vector<const TrainItem*> out;
    for (const auto& it : items) out.push_back(&it);
    return out;
}

}  // namespace

TEST_CASE("compute_loss: empty batch errors; oracle denoiser zeroes the MSE component") {
    auto m = tiny_model();
    NoiseSchedule sched = build_schedule(50, 1e-4, 0.02);
    LossWeights lw{1.0, 1.0, 0.1};
    CHECK_THROWS_WITH_AS(compute_loss(m, sched, {}, lw, 0.1, 0.1f, 1),
                         doctest::Contains("empty batch"), dac::runtime_error);

    auto items = tiny_items(4, 21);
    DenoiseOverride<float> oracle = [](Graph<float>&, Graph<float>::NodeId x0,
                                       Graph<float>::NodeId, int) { return x0; };
    LossParts parts = compute_loss(m, sched, ptrs(items), lw, 0.0, 0.1f, 7, 1, oracle);
    CHECK(parts.mse == 0.0);
    CHECK(parts.ce > 0.0);
}

TEST_CASE("compute_loss: weight collapse and component sum property") {
    auto m = tiny_model();
    NoiseSchedule sched = build_schedule(50, 1e-4, 0.02);
    auto items = tiny_items(3, 22);

    LossWeights mse_only{0.7, 0.0, 0.0};
    LossParts a = compute_loss(m, sched, ptrs(items), mse_only, 0.1, 0.1f, 9, 1);
    CHECK(a.total == doctest::Approx(0.7 * a.mse).epsilon(1e-6));

    LossWeights lw{1.0, 1.0, 0.1};
    LossParts b = compute_loss(m, sched, ptrs(items), lw, 0.1, 0.1f, 9, 1);
    CHECK(b.total ==
          doctest::Approx(1.0 * b.mse + 1.0 * b.ce + 0.1 * b.valid).epsilon(1e-6));
}

TEST_CASE("condition dropout: p_uncond 0 never uses the null row, p_uncond 1 always does") {
    auto m = tiny_model();
    NoiseSchedule sched = build_schedule(50, 1e-4, 0.02);
    auto items = tiny_items(8, 23);
    LossWeights lw{1.0, 1.0, 0.1};
    LossParts none = compute_loss(m, sched, ptrs(items), lw, 0.0, 0.1f, 11, 2);
    CHECK(none.n_uncond == 0);
    LossParts all = compute_loss(m, sched, ptrs(items), lw, 1.0, 0.1f, 11, 2);
    CHECK(all.n_uncond == 8);
}

TEST_CASE("batch determinism: thread count cannot change losses or gradients") {
    NoiseSchedule sched = build_schedule(50, 1e-4, 0.02);
    auto items = tiny_items(6, 24);
    LossWeights lw{1.0, 1.0, 0.1};

    auto run = [&](int threads) {
        auto m = tiny_model(55);
        m.params.zero_grads();
        LossParts parts =
            batch_loss(m, sched, ptrs(items), lw, 0.3, 0.1f, 77, threads, /*do_backward=*/true);
        std::vector<float> grads;
        for (const auto& e : m.params.entries)
            grads.insert(grads.end(), e.grad.data.begin(), e.grad.data.end());
        return std::make_pair(parts, grads);
    };
    auto [p1, g1] = run(1);
    auto [p2, g2] = run(2);
    auto [p3, g3] = run(5);
    CHECK(p1.total == p2.total);
    CHECK(p1.total == p3.total);
    CHECK(g1 == g2);
    CHECK(g1 == g3);
}

TEST_CASE("training runs are reproducible end to end") {
    RunConfig cfg;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.blocks = 2;
    cfg.max_len = 8;
    cfg.transition_layers = 1;
    cfg.time_embed_dim = 8;
    cfg.enc_width = 16;
    cfg.enc_blocks = 1;
    cfg.conv1_channels = 2;
    cfg.conv2_channels = 4;
    cfg.diffusion_steps = 50;
    cfg.stride = 25;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.warmup_steps = 4;
    cfg.lr = 1e-3;
    cfg.threads = 2;
    cfg.seed = 99;
    Vocab v = build_vocab({"a b c d e f g h"});
    auto items = tiny_items(12, 25);

    auto run = [&]() {
        TrainerState st = TrainerState::fresh(cfg, v);
        std::vector<double> losses;
        train_loop(st, items, -1, [&](const TrainLogEntry& e) { losses.push_back(e.total); });
        return std::make_pair(std::move(st), losses);
    };
    auto [s1, l1] = run();
    auto [s2, l2] = run();
    CHECK(l1 == l2);
    for (int p = 0; p < s1.model.params.size(); ++p)
        CHECK(s1.model.params[p].value.data == s2.model.params[p].value.data);
}

TEST_CASE("gradcheck: end-to-end 2-sample batch at 64-bit within 1e-3") {
    CaptionModel<double> m;
    m.codec_cfg.max_len = 6;
    m.codec_cfg.embed_dim = 8;
    m.codec_cfg.transition_layers = 1;
    m.audio_cfg.mel.n_fft = 32;
    m.audio_cfg.mel.hop = 16;
    m.audio_cfg.mel.bands = 8;
    m.audio_cfg.width = 8;
    m.audio_cfg.proj_dim = 8;
    m.audio_cfg.heads = 2;
    m.audio_cfg.blocks = 1;
    m.audio_cfg.conv1_channels = 2;
    m.audio_cfg.conv2_channels = 4;
    m.dn_cfg.width = 8;
    m.dn_cfg.heads = 2;
    m.dn_cfg.blocks = 1;
    m.dn_cfg.max_len = 6;
    m.dn_cfg.time_embed_dim = 8;
    m.vocab_size = 8;
    m.init(31);
    Rng wr(32);
    for (auto& e : m.params.entries) {
        bool is_weight = e.name.size() > 2 && e.name.compare(e.name.size() - 2, 2, ".w") == 0;
        if (is_weight && e.name.find("skip") == std::string::npos)
            e.value = TensorD::randn(e.value.shape, wr, 0.3);
    }

    std::vector<TrainItem> items(2);
    Rng rng(33);
    for (auto& it : items) {
        TokenSeq s;
        s.ids = {Vocab::BOS, 4, 5, 6, Vocab::EOS, Vocab::PAD};
        s.valid = {1, 1, 1, 1, 1, 0};
        s.ids[1] = 4 + static_cast<int>(rng.below(4));
        it.tokens = s;
        it.mel = TensorF::randn({9, 8}, rng);
    }
    NoiseSchedule sched = build_schedule(20, 1e-4, 0.02);
    LossWeights lw{1.0, 1.0, 0.1};

    auto eval = [&]() {
        return compute_loss(m, sched, ptrs(items), lw, 0.4, 0.1, 13, 1).total;
    };
    m.params.zero_grads();
    batch_loss(m, sched, ptrs(items), lw, 0.4, 0.1, 13, 1, /*do_backward=*/true);
    std::vector<TensorD> analytic;
    for (const auto& e : m.params.entries) analytic.push_back(e.grad);

    double h = 1e-5, max_err = 0.0;
    for (int pi = 0; pi < m.params.size(); ++pi) {
        auto& value = m.params[pi].value;
        for (int64_t i = 0; i < value.numel(); ++i) {
            double orig = value.data[i];
            value.data[i] = orig + h;
            double lp = eval();
            value.data[i] = orig - h;
            double lm = eval();
            value.data[i] = orig;
            double fd = (lp - lm) / (2.0 * h);
            double err = std::abs(analytic[static_cast<size_t>(pi)].data[i] - fd) /
                         (std::abs(fd) + 1e-8);
            max_err = std::max(max_err, err);
        }
    }
    MESSAGE("end-to-end max rel grad err: ", max_err);
    CHECK(max_err <= 1e-3);
}

TEST_CASE("checkpoint: save/load/save fixpoint, corruption, resume equivalence") {
    namespace fs = std::filesystem;
    RunConfig cfg;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.blocks = 2;
    cfg.max_len = 8;
    cfg.transition_layers = 1;
    cfg.time_embed_dim = 8;
    cfg.enc_width = 16;
    cfg.enc_blocks = 1;
    cfg.conv1_channels = 2;
    cfg.conv2_channels = 4;
    cfg.diffusion_steps = 50;
    cfg.stride = 25;
    cfg.batch_size = 4;
    cfg.epochs = 10;
    cfg.warmup_steps = 4;
    cfg.lr = 1e-3;
    cfg.threads = 2;
    cfg.seed = 7;
    Vocab v = build_vocab({"a b c d e f g h"});
    auto items = tiny_items(14, 26);  // 4 steps/epoch; step 7 is mid-epoch

    TrainerState st = TrainerState::fresh(cfg, v);
    train_loop(st, items, 7, nullptr);
    std::string path = "ckpt_test.dacc";
    save_checkpoint(st, path);

    // save -> load -> save produces byte-identical files.
    TrainerState re = load_checkpoint(path);
    std::string path2 = "ckpt_test2.dacc";
    save_checkpoint(re, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    // Resumed training equals the uninterrupted trace for 10 further steps.
    std::vector<double> cont_losses;
    train_loop(st, items, 10, [&](const TrainLogEntry& e) { cont_losses.push_back(e.total); });
    std::vector<double> resumed_losses;
    train_loop(re, items, 10, [&](const TrainLogEntry& e) { resumed_losses.push_back(e.total); });
    CHECK(cont_losses.size() == 10);
    CHECK(cont_losses == resumed_losses);
    for (int p = 0; p < st.model.params.size(); ++p)
        CHECK(st.model.params[p].value.data == re.model.params[p].value.data);

    // Truncation and bad magic give explicit errors.
    std::ofstream trunc("ckpt_trunc.dacc", std::ios::binary);
    trunc.write(b1.data(), static_cast<std::streamsize>(b1.size() / 2));
    trunc.close();
    CHECK_THROWS_WITH_AS(load_checkpoint("ckpt_trunc.dacc"), doctest::Contains("truncated"),
                         dac::runtime_error);

    std::string corrupt = b1;
    corrupt[0] = 'X';
    std::ofstream bad("ckpt_bad.dacc", std::ios::binary);
    bad.write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
    bad.close();
    CHECK_THROWS_WITH_AS(load_checkpoint("ckpt_bad.dacc"),
                         doctest::Contains("expected 'DACC'"), dac::runtime_error);

    for (const char* f : {"ckpt_test.dacc", "ckpt_test2.dacc", "ckpt_trunc.dacc", "ckpt_bad.dacc"})
        std::remove(f);
}

TEST_CASE("loss decreases early in training on structured data") {
    RunConfig cfg;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.blocks = 2;
    cfg.max_len = 8;
    cfg.transition_layers = 1;
    cfg.time_embed_dim = 8;
    cfg.enc_width = 16;
    cfg.enc_blocks = 1;
    cfg.conv1_channels = 2;
    cfg.conv2_channels = 4;
    cfg.diffusion_steps = 50;
    cfg.stride = 25;
    cfg.batch_size = 8;
    cfg.epochs = 50;
    cfg.warmup_steps = 10;
    cfg.lr = 2e-3;
    cfg.threads = 2;
    cfg.seed = 5;
    Vocab v = build_vocab({"a b c d e f g h"});
    auto items = tiny_items(32, 27);
    TrainerState st = TrainerState::fresh(cfg, v);
    std::vector<double> losses;
    train_loop(st, items, 120, [&](const TrainLogEntry& e) { losses.push_back(e.total); });
    double first = (losses[0] + losses[1] + losses[2] + losses[3]) / 4.0;
    double last = 0;
    for (size_t i = losses.size() - 4; i < losses.size(); ++i) last += losses[i];
    last /= 4.0;
    MESSAGE("loss first ", first, " -> last ", last);
    CHECK(last < 0.6 * first);
}
