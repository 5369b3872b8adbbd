#pragma once

#include <thread>
#include <utility>
#include <vector>

#include "dac/model.hpp"

namespace dac {

// Linear-beta DDPM schedule. Tables are double precision; index t runs 1..T
// with alpha_bar[0] = 1 by convention.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> beta;           // beta[t], t in 1..T (beta[0] unused)
    std::vector<double> alpha;          // 1 - beta_t
    std::vector<double> alpha_bar;      // prod_{s<=t} alpha_s, alpha_bar[0] = 1
    std::vector<double> posterior_var;  // beta_t * (1 - abar_{t-1}) / (1 - abar_t)
};

inline NoiseSchedule build_schedule(int steps, double beta1, double betaT) {
    DAC_CHECK(steps >= 1, "schedule needs at least 1 step");
    DAC_CHECK(0.0 < beta1 && beta1 <= betaT && betaT < 1.0,
              "schedule bounds violated: need 0 < beta1 <= betaT < 1, got ", beta1, ", ", betaT);
    NoiseSchedule s;
    s.steps = steps;
    s.beta.assign(static_cast<size_t>(steps + 1), 0.0);
    s.alpha.assign(static_cast<size_t>(steps + 1), 0.0);
    s.alpha_bar.assign(static_cast<size_t>(steps + 1), 1.0);
    s.posterior_var.assign(static_cast<size_t>(steps + 1), 0.0);
    for (int t = 1; t <= steps; ++t) {
        double frac = steps > 1 ? static_cast<double>(t - 1) / (steps - 1) : 0.0;
        s.beta[static_cast<size_t>(t)] = beta1 + (betaT - beta1) * frac;
        s.alpha[static_cast<size_t>(t)] = 1.0 - s.beta[static_cast<size_t>(t)];
        s.alpha_bar[static_cast<size_t>(t)] =
            s.alpha_bar[static_cast<size_t>(t - 1)] * s.alpha[static_cast<size_t>(t)];
        s.posterior_var[static_cast<size_t>(t)] =
            s.beta[static_cast<size_t>(t)] * (1.0 - s.alpha_bar[static_cast<size_t>(t - 1)]) /
            (1.0 - s.alpha_bar[static_cast<size_t>(t)]);
    }
    return s;
}

// Closed-form forward corruption with explicit noise:
// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
template <typename T>
Tensor<T> q_sample_with_eps(const Tensor<T>& x0, int t, const NoiseSchedule& s,
                            const Tensor<T>& eps) {
    DAC_CHECK(t >= 1 && t <= s.steps, "q_sample step ", t, " out of range [1,", s.steps, "]");
    DAC_CHECK(x0.same_shape(eps), "x0/eps shape mismatch");
    T a = static_cast<T>(std::sqrt(s.alpha_bar[static_cast<size_t>(t)]));
    T b = static_cast<T>(std::sqrt(1.0 - s.alpha_bar[static_cast<size_t>(t)]));
    Tensor<T> out = x0;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = a * x0.data[i] + b * eps.data[i];
    return out;
}

// Draws eps ~ N(0,I) from rng (null rng = zero noise) and returns (x_t, eps).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> q_sample(const Tensor<T>& x0, int t, const NoiseSchedule& s,
                                         Rng* rng) {
    Tensor<T> eps = rng ? Tensor<T>::randn(x0.shape, *rng) : Tensor<T>::zeros(x0.shape);
    return {q_sample_with_eps(x0, t, s, eps), std::move(eps)};
}

// In-graph version for training: gradient flows into x0 (and through it into
// the embedding table); the noise enters as a constant.
template <typename T>
typename Graph<T>::NodeId q_sample_node(Graph<T>& g, typename Graph<T>::NodeId x0, int t,
                                        const NoiseSchedule& s, const Tensor<T>& eps) {
    DAC_CHECK(t >= 1 && t <= s.steps, "q_sample step ", t, " out of range [1,", s.steps, "]");
    T a = static_cast<T>(std::sqrt(s.alpha_bar[static_cast<size_t>(t)]));
    double b = std::sqrt(1.0 - s.alpha_bar[static_cast<size_t>(t)]);
    Tensor<T> scaled = eps;
    for (auto& v : scaled.data) v = static_cast<T>(b * v);
    return g.add(g.scale(x0, a), g.constant(std::move(scaled), "q_noise"));
}

// eps implied by a clean-latent prediction, and back.
template <typename T>
Tensor<T> eps_from_x0(const Tensor<T>& x_t, const Tensor<T>& x0_hat, int t,
                      const NoiseSchedule& s) {
    double a = std::sqrt(s.alpha_bar[static_cast<size_t>(t)]);
    double b = std::sqrt(1.0 - s.alpha_bar[static_cast<size_t>(t)]);
    Tensor<T> out = x_t;
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data[i] = static_cast<T>((x_t.data[i] - a * x0_hat.data[i]) / b);
    return out;
}

template <typename T>
Tensor<T> x0_from_eps(const Tensor<T>& x_t, const Tensor<T>& eps, int t, const NoiseSchedule& s) {
    double a = std::sqrt(s.alpha_bar[static_cast<size_t>(t)]);
    double b = std::sqrt(1.0 - s.alpha_bar[static_cast<size_t>(t)]);
    Tensor<T> out = x_t;
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data[i] = static_cast<T>((x_t.data[i] - b * eps.data[i]) / a);
    return out;
}

// Classifier-free guidance extrapolation: w * cond + (1 - w) * uncond.
// w == 1 and w == 0 return the respective input bit-for-bit.
template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& pred_cond, const Tensor<T>& pred_uncond, double w) {
    DAC_CHECK(pred_cond.same_shape(pred_uncond), "cfg shape mismatch: ", pred_cond.shape_str(),
              " vs ", pred_uncond.shape_str());
    if (w == 1.0) return pred_cond;
    if (w == 0.0) return pred_uncond;
    Tensor<T> out = pred_cond;
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data[i] = static_cast<T>(w * pred_cond.data[i] + (1.0 - w) * pred_uncond.data[i]);
    return out;
}

// DDPM posterior generalized to the stride t -> t_prev. Noise is added except
// on the final transition to step 0 (null rng also disables it).
template <typename T>
Tensor<T> reverse_step(const Tensor<T>& x_t, int t, int t_prev, const Tensor<T>& x0_hat,
                       const NoiseSchedule& s, Rng* rng) {
    DAC_CHECK(0 <= t_prev && t_prev < t && t <= s.steps, "reverse_step ordering violation: t=", t,
              " t_prev=", t_prev);
    DAC_CHECK(x_t.same_shape(x0_hat), "x_t/x0_hat shape mismatch");
    double abar_t = s.alpha_bar[static_cast<size_t>(t)];
    double abar_p = s.alpha_bar[static_cast<size_t>(t_prev)];
    double alpha_stride = abar_t / abar_p;
    double beta_stride = 1.0 - alpha_stride;
    double c0 = std::sqrt(abar_p) * beta_stride / (1.0 - abar_t);
    double ct = std::sqrt(alpha_stride) * (1.0 - abar_p) / (1.0 - abar_t);
    double var = beta_stride * (1.0 - abar_p) / (1.0 - abar_t);
    Tensor<T> out = x_t;
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data[i] = static_cast<T>(c0 * x0_hat.data[i] + ct * x_t.data[i]);
    if (t_prev > 0 && rng != nullptr) {
        double sd = std::sqrt(var);
        for (auto& v : out.data) v += static_cast<T>(sd * rng->normal());
    }
    DAC_CHECK(out.all_finite(), "non-finite value produced by op 'reverse_step'");
    return out;
}

struct SamplerConfig {
    double guidance_w = 2.5;
    int skip_stride = 60;
    uint64_t seed = 0;
    int max_len = 40;

    void validate(int T) const {
        DAC_CHECK_CFG(guidance_w >= 0.0, "guidance scale must be >= 0, got ", guidance_w);
        DAC_CHECK_CFG(1 <= skip_stride && skip_stride <= T, "skip stride must be in [1,", T,
                      "], got ", skip_stride);
    }
};

struct SampleStats {
    int denoiser_steps = 0;   // visited steps with t > 0
    int forward_passes = 0;   // denoiser evaluations (cond + uncond)
    bool reached_zero = false;
};

// Decreasing step subsequence {T, T-s, T-2s, ...} with endpoint 0 appended.
inline std::vector<int> sample_schedule_steps(int T, int stride) {
    std::vector<int> ts;
    for (int t = T; t > 0; t -= stride) ts.push_back(t);
    ts.push_back(0);
    return ts;
}

// Strided ancestral sampler with classifier-free guidance in eps space.
// Starts from x_T ~ N(0,I), runs conditional and null denoising at every
// visited step, extrapolates, and rounds the final latent to tokens.
template <typename T>
std::pair<TokenSeq, Tensor<T>> sample_caption(CaptionModel<T>& model, const Tensor<T>& audio_feats,
                                              const NoiseSchedule& sched, const SamplerConfig& cfg,
                                              SampleStats* stats = nullptr) {
    cfg.validate(sched.steps);
    const int L = model.dn_cfg.max_len;
    const int D = model.dn_cfg.width;
    Rng rng(cfg.seed);
    Tensor<T> x = Tensor<T>::randn({L, D}, rng);
    auto ts = sample_schedule_steps(sched.steps, cfg.skip_stride);
    SampleStats st;
    for (size_t i = 0; i + 1 < ts.size(); ++i) {
        int t = ts[i], t_prev = ts[i + 1];
        Graph<T> g;
        auto cond = g.constant(audio_feats, "audio_features");
        auto x_t = g.constant(x, "x_t");
        Tensor<T> pred_c = g.value(model.denoise_node(g, x_t, t, sched.steps, cond));
        Tensor<T> pred_u = g.value(model.denoise_node(g, x_t, t, sched.steps, std::nullopt));
        st.denoiser_steps += 1;
        st.forward_passes += 2;
        Tensor<T> eps_c = eps_from_x0(x, pred_c, t, sched);
        Tensor<T> eps_u = eps_from_x0(x, pred_u, t, sched);
        Tensor<T> eps = cfg_combine(eps_c, eps_u, cfg.guidance_w);
        Tensor<T> x0_t = x0_from_eps(x, eps, t, sched);
        x = reverse_step(x, t, t_prev, x0_t, sched, &rng);
        if (t_prev == 0) st.reached_zero = true;
    }
    Graph<T> g;
    TokenSeq seq = round_latent(g, model.params, model.codec, g.constant(x, "x0"));
    if (stats) *stats = st;
    return {std::move(seq), std::move(x)};
}

// Batch sampling over waveforms. Chains are independent with per-item seed =
// base_seed + item index, so batch size and thread count cannot change any
// caption.
template <typename T>
std::vector<TokenSeq> caption_waveforms(CaptionModel<T>& model, const NoiseSchedule& sched,
                                        const SamplerConfig& base, uint64_t base_seed,
                                        const std::vector<Waveform>& wavs, int threads) {
    int n = static_cast<int>(wavs.size());
    std::vector<TokenSeq> out(static_cast<size_t>(n));
    std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
    int nthreads = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    if (nthreads < 1) nthreads = 1;
    auto work = [&](int i) {
        try {
            TensorF mel = mel_spectrogram(fit_clip(wavs[static_cast<size_t>(i)]),
                                          model.audio_cfg.mel);
            Tensor<T> feats = model.features_value(mel.template cast<T>());
            SamplerConfig cfg = base;
            cfg.seed = base_seed + static_cast<uint64_t>(i);
            out[static_cast<size_t>(i)] = sample_caption(model, feats, sched, cfg).first;
        } catch (...) {
            errors[static_cast<size_t>(i)] = std::current_exception();
        }
    };
    for (int wave = 0; wave < n; wave += nthreads) {
        int wave_n = std::min(nthreads, n - wave);
        if (wave_n == 1) {
            work(wave);
        } else {
            std::vector<std::thread> pool;
            for (int k = 0; k < wave_n; ++k) pool.emplace_back(work, wave + k);
            for (auto& th : pool) th.join();
        }
    }
    for (const auto& err : errors)
        if (err) std::rethrow_exception(err);
    return out;
}

}  // namespace dac
