#include "dac/training.hpp"

#include <cstring>
#include <fstream>
#include <numeric>

#include "dac/synthdata.hpp"

namespace dac {

std::string TrainLogEntry::line() const {
    std::ostringstream os;
    os.precision(9);
    os << "step=" << step << " lr=" << lr << " loss=" << total << " mse=" << mse << " ce=" << ce
       << " valid=" << valid << " uncond=" << n_uncond;
    return os.str();
}

TrainerState TrainerState::fresh(const RunConfig& cfg, const Vocab& vocab) {
    TrainerState st;
    st.cfg = cfg;
    st.vocab = vocab;
    st.model = make_model<float>(cfg, vocab.size());
    st.sched = build_schedule(cfg.diffusion_steps, cfg.beta1, cfg.betaT);
    st.opt.init(st.model.params);
    st.master = Rng(fold_seed(cfg.seed, 0x6d617374ull));
    return st;
}

void train_loop(TrainerState& st, const std::vector<TrainItem>& train_items, int64_t max_steps,
                const std::function<void(const TrainLogEntry&)>& on_log,
                const std::function<void(int64_t)>& on_epoch) {
    DAC_CHECK(!train_items.empty(), "empty training set");
    const RunConfig& cfg = st.cfg;
    int64_t n = static_cast<int64_t>(train_items.size());
    int64_t b = cfg.batch_size;
    int64_t steps_per_epoch = (n + b - 1) / b;
    LossWeights lw{cfg.lambda_mse, cfg.lambda_ce, cfg.lambda_valid};
    int64_t done = 0;
    while (st.epoch < cfg.epochs && (max_steps < 0 || done < max_steps)) {
        if (st.epoch_pos == 0) st.epoch_shuffle_seed = st.master.next_u64();
        std::vector<int64_t> perm(static_cast<size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        Rng shuffle_rng(st.epoch_shuffle_seed);
        for (int64_t i = n - 1; i > 0; --i) {
            int64_t j = static_cast<int64_t>(shuffle_rng.below(static_cast<uint64_t>(i + 1)));
            std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
        }
        for (; st.epoch_pos < steps_per_epoch && (max_steps < 0 || done < max_steps);
             ++st.epoch_pos) {
            uint64_t step_seed = st.master.next_u64();
            int64_t lo = st.epoch_pos * b;
            int64_t hi = std::min(lo + b, n);
            std::vector<const TrainItem*> batch;
            batch.reserve(static_cast<size_t>(hi - lo));
            for (int64_t i = lo; i < hi; ++i)
                batch.push_back(&train_items[static_cast<size_t>(perm[static_cast<size_t>(i)])]);
            LossParts parts = batch_loss(st.model, st.sched, batch, lw, cfg.p_uncond,
                                         static_cast<float>(cfg.sigma0), step_seed, cfg.threads,
                                         /*do_backward=*/true, cfg.codec_only != 0);
            double lr = lr_at(st.step, cfg.lr, cfg.warmup_steps);
            train_step(st.model.params, st.opt, lr);
            TrainLogEntry e;
            e.step = st.step;
            e.lr = lr;
            e.total = parts.total;
            e.mse = parts.mse;
            e.ce = parts.ce;
            e.valid = parts.valid;
            e.n_uncond = parts.n_uncond;
            st.step += 1;
            done += 1;
            if (on_log) on_log(e);
        }
        if (st.epoch_pos == steps_per_epoch) {
            st.epoch += 1;
            st.epoch_pos = 0;
            if (on_epoch) on_epoch(st.epoch);
        }
    }
}

std::vector<TrainItem> load_train_items(const std::string& data_dir, const std::string& split,
                                        const Vocab& vocab, const RunConfig& cfg) {
    auto rows = read_manifest(data_dir + "/" + split + ".tsv");
    DAC_CHECK(!rows.empty(), "empty manifest for split '", split, "' in ", data_dir);
    std::vector<TrainItem> items(rows.size());
    MelConfig mel_cfg = cfg.audio_config().mel;
    int nthreads = cfg.threads > 0 ? cfg.threads
                                   : static_cast<int>(std::thread::hardware_concurrency());
    if (nthreads < 1) nthreads = 1;
    std::vector<std::exception_ptr> errors(rows.size());
    auto work = [&](size_t i) {
        try {
            Waveform w = fit_clip(read_wav(data_dir + "/" + rows[i].wav_path));
            items[i].mel = mel_spectrogram(w, mel_cfg);
            items[i].tokens = tokenize(rows[i].caption, vocab, cfg.max_len);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    std::vector<std::thread> pool;
    for (int k = 0; k < nthreads; ++k)
        pool.emplace_back([&, k]() {
            for (size_t i = static_cast<size_t>(k); i < rows.size();
                 i += static_cast<size_t>(nthreads))
                work(i);
        });
    for (auto& th : pool) th.join();
    for (const auto& err : errors)
        if (err) std::rethrow_exception(err);
    return items;
}

// ---- checkpoint format ------------------------------------------------------------
//
//   "DACC" | u32 version | config snapshot | vocab line | named f32 tensors
//   | Adam moments | master rng state | epoch, epoch_pos, shuffle seed | step
//
// All integers little-endian; tensor payloads are raw row-major f32.

namespace {

struct Writer {
    std::string buf;

    void raw(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
    void u8(uint8_t v) { raw(&v, 1); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void i64(int64_t v) { raw(&v, 8); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    void tensor(const TensorF& t) {
        u32(static_cast<uint32_t>(t.ndim()));
        for (int64_t d : t.shape) i64(d);
        u64(t.data.size() * sizeof(float));
        raw(t.data.data(), t.data.size() * sizeof(float));
    }
};

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    explicit Reader(const std::string& b) : buf(b) {}

    void raw(void* p, size_t n) {
        DAC_CHECK(pos + n <= buf.size(), "truncated checkpoint (need ", n, " bytes at offset ",
                  pos, ", file has ", buf.size(), ")");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    uint8_t u8() {
        uint8_t v;
        raw(&v, 1);
        return v;
    }
    uint32_t u32() {
        uint32_t v;
        raw(&v, 4);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        raw(&v, 8);
        return v;
    }
    int64_t i64() {
        int64_t v;
        raw(&v, 8);
        return v;
    }
    std::string str() {
        uint64_t n = u64();
        DAC_CHECK(pos + n <= buf.size(), "truncated checkpoint string");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    TensorF tensor() {
        uint32_t nd = u32();
        std::vector<int64_t> shape(nd);
        for (auto& d : shape) d = i64();
        uint64_t bytes = u64();
        TensorF t(shape);
        DAC_CHECK(bytes == t.data.size() * sizeof(float), "checkpoint tensor size mismatch");
        raw(t.data.data(), bytes);
        return t;
    }
};

}  // namespace

void save_checkpoint(const TrainerState& st, const std::string& path) {
    Writer w;
    w.raw("DACC", 4);
    w.u32(kCheckpointVersion);
    w.str(st.cfg.to_kv());
    w.str(vocab_to_line(st.vocab));
    w.u32(static_cast<uint32_t>(st.model.params.size()));
    for (const auto& e : st.model.params.entries) {
        w.str(e.name);
        w.u8(0);  // dtype f32
        w.tensor(e.value);
    }
    w.u8(1);  // optimizer moments present
    w.i64(st.opt.t);
    for (int i = 0; i < st.model.params.size(); ++i) {
        w.tensor(st.opt.m[static_cast<size_t>(i)]);
        w.tensor(st.opt.v[static_cast<size_t>(i)]);
    }
    w.u64(st.master.state());
    w.i64(st.epoch);
    w.i64(st.epoch_pos);
    w.u64(st.epoch_shuffle_seed);
    w.i64(st.step);
    std::ofstream f(path, std::ios::binary);
    DAC_CHECK(f.good(), "cannot write checkpoint ", path);
    f.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    DAC_CHECK(f.good(), "short write to ", path);
}

TrainerState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    DAC_CHECK(f.good(), "cannot open checkpoint ", path);
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r(raw);
    char magic[5] = {0};
    r.raw(magic, 4);
    DAC_CHECK(std::string(magic) == "DACC", "bad checkpoint magic: expected 'DACC', found '",
              magic, "'");
    uint32_t version = r.u32();
    DAC_CHECK(version == kCheckpointVersion, "bad checkpoint version: expected ",
              kCheckpointVersion, ", found ", version);
    RunConfig cfg = RunConfig::from_kv(r.str());
    Vocab vocab = vocab_from_line(r.str());
    TrainerState st = TrainerState::fresh(cfg, vocab);
    uint32_t n_tensors = r.u32();
    DAC_CHECK(n_tensors == static_cast<uint32_t>(st.model.params.size()),
              "checkpoint has ", n_tensors, " tensors, model expects ", st.model.params.size());
    for (uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = r.str();
        uint8_t dtype = r.u8();
        DAC_CHECK(dtype == 0, "unsupported tensor dtype ", static_cast<int>(dtype));
        TensorF t = r.tensor();
        auto& e = st.model.params[static_cast<int>(i)];
        DAC_CHECK(e.name == name, "checkpoint tensor order mismatch: expected '", e.name,
                  "', found '", name, "'");
        DAC_CHECK(e.value.shape == t.shape, "checkpoint tensor shape mismatch for '", name, "'");
        e.value = std::move(t);
    }
    uint8_t has_opt = r.u8();
    DAC_CHECK(has_opt == 1, "checkpoint missing optimizer state");
    st.opt.t = r.i64();
    for (int i = 0; i < st.model.params.size(); ++i) {
        st.opt.m[static_cast<size_t>(i)] = r.tensor();
        st.opt.v[static_cast<size_t>(i)] = r.tensor();
    }
    st.master.set_state(r.u64());
    st.epoch = r.i64();
    st.epoch_pos = r.i64();
    st.epoch_shuffle_seed = r.u64();
    st.step = r.i64();
    DAC_CHECK(r.pos == raw.size(), "checkpoint has ", raw.size() - r.pos, " trailing bytes");
    return st;
}

}  // namespace dac
