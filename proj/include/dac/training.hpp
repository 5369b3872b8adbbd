#pragma once

#include <memory>
#include <thread>

#include "dac/config.hpp"
#include "dac/diffusion.hpp"

namespace dac {

struct TrainItem {
    TokenSeq tokens;
    TensorF mel;
};

struct LossWeights {
    double mse = 1.0;
    double ce = 1.0;
    double valid = 0.1;
};

struct LossParts {
    double total = 0.0;
    double mse = 0.0;
    double ce = 0.0;
    double valid = 0.0;
    int n_uncond = 0;  // batch items that used the null conditioning
};

// Linear warmup 0 -> lr over warmup_steps, constant afterward.
inline double lr_at(int64_t step, double lr, int warmup_steps) {
    if (warmup_steps <= 0 || step >= warmup_steps) return lr;
    return lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

// ---- batch loss -----------------------------------------------------------------

// Per-item draw order is fixed (t, conditioning coin, embedding noise, q
// noise) and every item owns a stream derived from (step_seed, item index),
// so thread count cannot change any value.
template <typename T>
struct ItemResult {
    std::unique_ptr<Graph<T>> graph;
    double mse = 0, ce = 0, valid = 0, total = 0;
    bool uncond = false;
};

// Test hook: replaces the denoiser inside the loss (e.g. an oracle returning
// the true x0 node).
template <typename T>
using DenoiseOverride = std::function<typename Graph<T>::NodeId(
    Graph<T>&, typename Graph<T>::NodeId x0, typename Graph<T>::NodeId x_t, int t)>;

template <typename T>
void item_forward_backward(CaptionModel<T>& model, const NoiseSchedule& sched,
                           const TrainItem& item, const LossWeights& lw, double p_uncond,
                           T sigma0, uint64_t item_seed, int batch_size, bool do_backward,
                           bool codec_only, ItemResult<T>& out,
                           const DenoiseOverride<T>& denoise_fn = {}) {
    Rng rng(item_seed);
    auto& g = *out.graph;
    int t = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(sched.steps)));
    out.uncond = rng.uniform() < p_uncond;

    auto x0 = model.embed(g, item.tokens, sigma0, &rng);
    typename Graph<T>::NodeId target_latent;
    if (codec_only) {
        // Codec pretraining: invert the (noisy) embedding directly.
        target_latent = x0;
    } else {
        Tensor<T> eps = Tensor<T>::randn(g.value(x0).shape, rng);
        auto x_t = q_sample_node(g, x0, t, sched, eps);
        if (denoise_fn) {
            target_latent = denoise_fn(g, x0, x_t, t);
        } else {
            std::optional<typename Graph<T>::NodeId> cond;
            if (!out.uncond) cond = model.features(g, item.mel.template cast<T>());
            target_latent = model.denoise_node(g, x_t, t, sched.steps, cond);
        }
    }

    auto mse = g.mse_masked(x0, target_latent, item.tokens.valid);
    auto round = model.round_nodes(g, target_latent);
    auto ce = g.cross_entropy(round.logits, item.tokens.ids, item.tokens.valid);
    auto vloss = g.bce_logits(round.valid_logits, item.tokens.valid);
    auto total = g.weighted_sum({mse, ce, vloss},
                                {static_cast<T>(lw.mse), static_cast<T>(lw.ce),
                                 static_cast<T>(lw.valid)});
    out.mse = static_cast<double>(g.value(mse).data[0]);
    out.ce = static_cast<double>(g.value(ce).data[0]);
    out.valid = static_cast<double>(g.value(vloss).data[0]);
    out.total = static_cast<double>(g.value(total).data[0]);
    if (do_backward) {
        auto scaled = g.scale(total, T(1) / static_cast<T>(batch_size));
        g.backward(scaled, /*accumulate_into_store=*/false);
    }
}

// The three-part loss over a batch; with do_backward, leaf gradients are
// harvested into the store in item order (bit-identical to a sequential run
// regardless of thread count).
template <typename T>
LossParts batch_loss(CaptionModel<T>& model, const NoiseSchedule& sched,
                     const std::vector<const TrainItem*>& batch, const LossWeights& lw,
                     double p_uncond, T sigma0, uint64_t step_seed, int threads, bool do_backward,
                     bool codec_only = false, const DenoiseOverride<T>& denoise_fn = {}) {
    DAC_CHECK(!batch.empty(), "empty batch");
    int b = static_cast<int>(batch.size());
    int nthreads = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    if (nthreads < 1) nthreads = 1;
    LossParts parts;
    for (int wave = 0; wave < b; wave += nthreads) {
        int wave_n = std::min(nthreads, b - wave);
        std::vector<ItemResult<T>> results(static_cast<size_t>(wave_n));
        std::vector<std::exception_ptr> errors(static_cast<size_t>(wave_n));
        for (auto& r : results) r.graph = std::make_unique<Graph<T>>();
        auto work = [&](int k) {
            try {
                int j = wave + k;
                item_forward_backward(model, sched, *batch[static_cast<size_t>(j)], lw, p_uncond,
                                      sigma0, fold_seed(step_seed, static_cast<uint64_t>(j)), b,
                                      do_backward, codec_only, results[static_cast<size_t>(k)],
                                      denoise_fn);
            } catch (...) {
                errors[static_cast<size_t>(k)] = std::current_exception();
            }
        };
        if (wave_n == 1) {
            work(0);
        } else {
            std::vector<std::thread> pool;
            pool.reserve(static_cast<size_t>(wave_n));
            for (int k = 0; k < wave_n; ++k) pool.emplace_back(work, k);
            for (auto& th : pool) th.join();
        }
        // First failure in item order wins, so errors are reproducible too.
        for (const auto& err : errors)
            if (err) std::rethrow_exception(err);
        // Item-order reduction.
        for (int k = 0; k < wave_n; ++k) {
            auto& r = results[static_cast<size_t>(k)];
            if (do_backward) r.graph->accumulate_param_grads();
            parts.mse += r.mse;
            parts.ce += r.ce;
            parts.valid += r.valid;
            parts.total += r.total;
            parts.n_uncond += r.uncond ? 1 : 0;
        }
    }
    parts.mse /= b;
    parts.ce /= b;
    parts.valid /= b;
    parts.total /= b;
    return parts;
}

// Spec-facing wrapper: loss only, no gradient side effects.
template <typename T>
LossParts compute_loss(CaptionModel<T>& model, const NoiseSchedule& sched,
                       const std::vector<const TrainItem*>& batch, const LossWeights& lw,
                       double p_uncond, T sigma0, uint64_t step_seed, int threads = 1,
                       const DenoiseOverride<T>& denoise_fn = {}) {
    return batch_loss(model, sched, batch, lw, p_uncond, sigma0, step_seed, threads,
                      /*do_backward=*/false, /*codec_only=*/false, denoise_fn);
}

// ---- Adam ------------------------------------------------------------------------

template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m, v;
    int64_t t = 0;

    void init(const ParamStore<T>& ps) {
        m.clear();
        v.clear();
        for (const auto& e : ps.entries) {
            m.push_back(Tensor<T>::zeros(e.value.shape));
            v.push_back(Tensor<T>::zeros(e.value.shape));
        }
        t = 0;
    }
};

// Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8); zeroes the
// gradients afterwards. Non-finite gradients abort the step.
template <typename T>
void train_step(ParamStore<T>& ps, AdamState<T>& opt, double lr) {
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (const auto& e : ps.entries)
        DAC_CHECK(e.grad.all_finite(), "NaN gradient in parameter '", e.name, "'");
    opt.t += 1;
    double c1 = 1.0 - std::pow(b1, static_cast<double>(opt.t));
    double c2 = 1.0 - std::pow(b2, static_cast<double>(opt.t));
    for (int i = 0; i < ps.size(); ++i) {
        auto& e = ps[i];
        auto& m = opt.m[static_cast<size_t>(i)];
        auto& v = opt.v[static_cast<size_t>(i)];
        for (int64_t k = 0; k < e.value.numel(); ++k) {
            double g = static_cast<double>(e.grad.data[k]);
            double mn = b1 * static_cast<double>(m.data[k]) + (1.0 - b1) * g;
            double vn = b2 * static_cast<double>(v.data[k]) + (1.0 - b2) * g * g;
            m.data[k] = static_cast<T>(mn);
            v.data[k] = static_cast<T>(vn);
            double update = lr * (mn / c1) / (std::sqrt(vn / c2) + eps);
            e.value.data[k] = static_cast<T>(static_cast<double>(e.value.data[k]) - update);
        }
    }
    ps.zero_grads();
}

// ---- trainer ----------------------------------------------------------------------

struct TrainLogEntry {
    int64_t step = 0;
    double lr = 0, total = 0, mse = 0, ce = 0, valid = 0;
    int n_uncond = 0;

    std::string line() const;
};

struct TrainerState {
    RunConfig cfg;
    Vocab vocab;
    CaptionModelF model;
    NoiseSchedule sched;
    AdamState<float> opt;
    int64_t step = 0;
    int64_t epoch = 0;
    int64_t epoch_pos = 0;  // batch index inside the current epoch
    uint64_t epoch_shuffle_seed = 0;
    Rng master{0};

    static TrainerState fresh(const RunConfig& cfg, const Vocab& vocab);
};

// Runs `max_steps` optimizer steps (or to the configured epoch count when
// max_steps < 0), invoking on_log after every step and on_epoch at each epoch
// boundary. Resumable mid-epoch.
void train_loop(TrainerState& st, const std::vector<TrainItem>& train_items, int64_t max_steps,
                const std::function<void(const TrainLogEntry&)>& on_log,
                const std::function<void(int64_t)>& on_epoch = {});

// Loads one split of an on-disk dataset: wavs read relative to data_dir,
// captions tokenized against `vocab`, mel spectrograms precomputed (in
// parallel; per-item results are thread-independent).
std::vector<TrainItem> load_train_items(const std::string& data_dir, const std::string& split,
                                        const Vocab& vocab, const RunConfig& cfg);

// ---- checkpointing ------------------------------------------------------------------

constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainerState& st, const std::string& path);
TrainerState load_checkpoint(const std::string& path);

}  // namespace dac
