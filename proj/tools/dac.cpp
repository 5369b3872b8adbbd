#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dac/evalsuite.hpp"
#include "dac/synthdata.hpp"
#include "dac/training.hpp"

namespace fs = std::filesystem;
using namespace dac;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "key=value config file");
    cmd->add_option("--set", opts.sets, "override a config key (key=value, repeatable)")
        ->take_all();
}

// defaults -> config file -> --set overrides -> dedicated flags (callers
// apply those after this returns).
RunConfig resolve_config(const CommonOpts& opts) {
    RunConfig cfg;
    if (!opts.config_path.empty()) cfg = RunConfig::from_file(opts.config_path);
    for (const auto& kv : opts.sets) {
        auto eq = kv.find('=');
        DAC_CHECK_CFG(eq != std::string::npos, "--set expects key=value, got '", kv, "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

void echo_config(const RunConfig& cfg) {
    std::cout << "# resolved configuration\n" << cfg.to_kv() << std::flush;
}

int cmd_gen(const RunConfig& cfg, bool force) {
    DAC_CHECK_CFG(!cfg.out_dir.empty(), "gen requires --out");
    cfg.validate();
    echo_config(cfg);
    if (fs::exists(cfg.out_dir) && !fs::is_empty(cfg.out_dir))
        DAC_CHECK_CFG(force, "output dir ", cfg.out_dir, " is not empty (use --force)");
    SynthDataset ds = build_dataset(cfg.n_train, cfg.n_val, cfg.n_test, cfg.seed);
    write_dataset_dir(ds, cfg.out_dir);
    std::ofstream(cfg.out_dir + "/gen_config.cfg") << cfg.to_kv();
    std::cout << "wrote " << ds.train.size() << "/" << ds.val.size() << "/" << ds.test.size()
              << " items to " << cfg.out_dir << "\n";
    return 0;
}

int cmd_train(RunConfig cfg, const std::string& resume) {
    DAC_CHECK_CFG(!cfg.data_dir.empty(), "train requires --data");
    DAC_CHECK_CFG(!cfg.out_dir.empty(), "train requires --out");
    cfg.validate();
    DAC_CHECK_CFG(fs::exists(cfg.data_dir + "/train.tsv"), "dataset not found in ", cfg.data_dir,
                  " (missing train.tsv)");
    echo_config(cfg);
    fs::create_directories(cfg.out_dir);

    TrainerState st;
    if (!resume.empty()) {
        st = load_checkpoint(resume);
        // Paths and run-length knobs may be overridden on resume; model-shape
        // keys stay as the checkpoint recorded them.
        st.cfg.data_dir = cfg.data_dir;
        st.cfg.out_dir = cfg.out_dir;
        st.cfg.epochs = cfg.epochs;
        st.cfg.threads = cfg.threads;
        st.cfg.checkpoint_every = cfg.checkpoint_every;
    } else {
        auto rows = read_manifest(cfg.data_dir + "/train.tsv");
        std::vector<std::string> captions;
        for (const auto& r : rows) captions.push_back(r.caption);
        Vocab vocab = build_vocab(captions);
        st = TrainerState::fresh(cfg, vocab);
    }
    std::vector<TrainItem> items = load_train_items(st.cfg.data_dir, "train", st.vocab, st.cfg);
    std::cout << "loaded " << items.size() << " train items, vocab size " << st.vocab.size()
              << ", params " << st.model.params.total_params() << "\n";

    std::ofstream log(st.cfg.out_dir + "/train.log", std::ios::app);
    int64_t last_step = st.step;
    try {
        train_loop(
            st, items, -1,
            [&](const TrainLogEntry& e) {
                last_step = e.step;
                log << e.line() << "\n";
                if (e.step % 50 == 0) std::cout << e.line() << "\n" << std::flush;
            },
            [&](int64_t epoch) {
                if (st.cfg.checkpoint_every > 0 && epoch % st.cfg.checkpoint_every == 0)
                    save_checkpoint(st, st.cfg.out_dir + "/epoch" + std::to_string(epoch) +
                                            ".dacc");
            });
    } catch (const dac::runtime_error& e) {
        std::cerr << "training aborted at step " << last_step << ": " << e.what() << "\n";
        return 1;
    }
    save_checkpoint(st, st.cfg.out_dir + "/final.dacc");
    save_vocab(st.vocab, st.cfg.out_dir + "/vocab.txt");
    std::cout << "saved " << st.cfg.out_dir << "/final.dacc after " << st.step << " steps\n";
    return 0;
}

int cmd_sample(const std::string& checkpoint, std::vector<std::string> wav_paths,
               const std::string& list_path, const std::string& out_path, int num_samples,
               uint64_t seed, double guidance, int stride) {
    TrainerState st = load_checkpoint(checkpoint);
    if (guidance >= 0.0) st.cfg.guidance = guidance;
    if (stride > 0) st.cfg.stride = stride;
    st.cfg.seed = seed;
    st.cfg.num_samples = num_samples;
    st.cfg.checkpoint = checkpoint;
    st.cfg.validate();
    echo_config(st.cfg);

    if (!list_path.empty()) {
        std::string base = fs::path(list_path).parent_path().string();
        for (const auto& row : read_manifest(list_path))
            wav_paths.push_back(base.empty() ? row.wav_path : base + "/" + row.wav_path);
    }
    DAC_CHECK_CFG(!wav_paths.empty(), "sample requires --wav or --list");

    SamplerConfig scfg;
    scfg.guidance_w = st.cfg.guidance;
    scfg.skip_stride = st.cfg.stride;
    scfg.max_len = st.cfg.max_len;

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path);
        DAC_CHECK(file.good(), "cannot write ", out_path);
        out = &file;
    }
    int failures = 0;
    for (size_t i = 0; i < wav_paths.size(); ++i) {
        try {
            Waveform w = fit_clip(read_wav(wav_paths[i]));
            TensorF mel = mel_spectrogram(w, st.model.audio_cfg.mel);
            TensorF feats = st.model.features_value(mel);
            std::string line;
            for (int k = 0; k < num_samples; ++k) {
                SamplerConfig cfg = scfg;
                cfg.seed = seed + i + static_cast<uint64_t>(k) * wav_paths.size();
                auto [tokens, latent] = sample_caption(st.model, feats, st.sched, cfg);
                if (k) line += '\t';
                line += detokenize(tokens, st.vocab);
            }
            (*out) << line << "\n";
        } catch (const std::exception& e) {
            std::cerr << "error on " << wav_paths[i] << ": " << e.what() << "\n";
            (*out) << "\n";  // keep output order-preserving
            failures += 1;
        }
    }
    return failures == 0 ? 0 : 1;
}

int cmd_eval(const std::string& hyp_path, const std::string& ref_path,
             const std::string& corpus_path) {
    EvalCorpus corpus;
    if (!corpus_path.empty()) {
        corpus = load_eval_corpus(corpus_path);
    } else {
        DAC_CHECK_CFG(!hyp_path.empty() && !ref_path.empty(),
                      "eval requires --hyp and --ref (or --corpus)");
        std::ifstream hf(hyp_path), rf(ref_path);
        DAC_CHECK_CFG(hf.good(), "cannot read hypothesis file ", hyp_path);
        DAC_CHECK_CFG(rf.good(), "cannot read reference file ", ref_path);
        std::string hline, rline;
        std::vector<std::string> hyps;
        std::vector<std::vector<std::string>> refs;
        while (std::getline(hf, hline)) hyps.push_back(hline);
        while (std::getline(rf, rline)) {
            std::vector<std::string> cols;
            size_t pos = 0;
            while (true) {
                auto tab = rline.find('\t', pos);
                if (tab == std::string::npos) {
                    cols.push_back(rline.substr(pos));
                    break;
                }
                cols.push_back(rline.substr(pos, tab - pos));
                pos = tab + 1;
            }
            refs.push_back(cols);
        }
        DAC_CHECK_CFG(hyps.size() == refs.size(), "count mismatch: ", hyps.size(),
                      " hypotheses vs ", refs.size(), " references");
        corpus = make_corpus(hyps, refs);
    }
    MetricReport rep = evaluate_corpus(corpus);
    std::cout << rep.kv() << rep.table();
    return 0;
}

int cmd_bench(const std::string& checkpoint, const std::string& data_dir,
              const std::string& split, int batch, int stride, int audios, int repeats,
              uint64_t seed) {
    TrainerState st = load_checkpoint(checkpoint);
    if (stride > 0) st.cfg.stride = stride;
    st.cfg.validate();
    echo_config(st.cfg);

    auto rows = read_manifest(data_dir + "/" + split + ".tsv");
    DAC_CHECK_CFG(static_cast<int>(rows.size()) >= audios, "split has ", rows.size(),
                  " items, need ", audios);
    std::vector<Waveform> wavs;
    for (int i = 0; i < audios; ++i)
        wavs.push_back(fit_clip(read_wav(data_dir + "/" + rows[static_cast<size_t>(i)].wav_path)));

    SamplerConfig scfg;
    scfg.guidance_w = st.cfg.guidance;
    scfg.skip_stride = st.cfg.stride;
    scfg.max_len = st.cfg.max_len;
    int threads = st.cfg.threads;
    uint64_t counter = 0;
    Captioner captioner = [&](const std::vector<Waveform>& batch_wavs) {
        auto out = caption_waveforms(st.model, st.sched, scfg, seed + counter, batch_wavs, threads);
        counter += batch_wavs.size();
        return out;
    };
    SpeedReport rep = benchmark_speed(captioner, wavs, batch, repeats);
    MetricReport mr;
    mr.scores["tps"] = rep.tps;
    mr.scores["aps"] = rep.aps;
    mr.total_seconds = rep.total_seconds;
    mr.token_count = rep.token_count;
    mr.audio_count = rep.audio_count;
    std::cout << mr.kv();
    for (size_t i = 0; i < rep.tps_runs.size(); ++i)
        std::cout << "tps_run_" << i << "=" << rep.tps_runs[i] << "\n";
    std::cout << "stride=" << st.cfg.stride << " denoiser_steps_per_audio="
              << (sample_schedule_steps(st.sched.steps, st.cfg.stride).size() - 1) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dac: diffusion-based non-autoregressive audio captioning"};
    app.require_subcommand(1);

    CommonOpts gen_opts, train_opts;

    auto* gen = app.add_subcommand("gen", "generate the synthetic paired dataset");
    add_common(gen, gen_opts);
    std::string gen_out;
    bool gen_force = false;
    uint64_t gen_seed = 0;
    bool gen_seed_set = false;
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_flag("--force", gen_force, "overwrite a non-empty output directory");
    gen->add_option("--seed", gen_seed, "dataset seed")->each([&](const std::string&) {
        gen_seed_set = true;
    });

    auto* train = app.add_subcommand("train", "train a captioner on a generated dataset");
    add_common(train, train_opts);
    std::string train_data, train_out, train_resume, train_variant;
    int train_epochs = -1;
    bool codec_only = false;
    uint64_t train_seed = 0;
    bool train_seed_set = false;
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "output directory for checkpoints/logs")->required();
    train->add_option("--resume", train_resume, "checkpoint to resume from");
    train->add_option("--variant", train_variant, "denoiser variant (dit|uvit)");
    train->add_option("--epochs", train_epochs, "epoch count");
    train->add_flag("--codec-only", codec_only, "pretrain only the embedding/rounding codec");
    train->add_option("--seed", train_seed, "run seed")->each([&](const std::string&) {
        train_seed_set = true;
    });

    auto* sample = app.add_subcommand("sample", "caption wav files with a trained checkpoint");
    std::string s_checkpoint, s_list, s_out;
    std::vector<std::string> s_wavs;
    int s_num = 1, s_stride = 0;
    double s_guidance = -1.0;
    uint64_t s_seed = 0;
    sample->add_option("--checkpoint", s_checkpoint, "trained checkpoint")->required();
    sample->add_option("--wav", s_wavs, "input wav file (repeatable)");
    sample->add_option("--list", s_list, "manifest whose first column lists wav paths");
    sample->add_option("--out", s_out, "write captions here instead of stdout");
    sample->add_option("--num-samples", s_num, "captions per audio (distinct seeds)");
    sample->add_option("--seed", s_seed, "base sampling seed");
    sample->add_option("--guidance", s_guidance, "guidance scale override");
    sample->add_option("--stride", s_stride, "skip stride override");

    auto* eval = app.add_subcommand("eval", "score hypotheses against references");
    std::string e_hyp, e_ref, e_corpus;
    eval->add_option("--hyp", e_hyp, "hypothesis file, one caption per line");
    eval->add_option("--ref", e_ref, "reference file, TAB-separated references per line");
    eval->add_option("--corpus", e_corpus, "single corpus file: hyp TAB ref[TAB ref...]");

    auto* bench = app.add_subcommand("bench", "measure captioning TPS/APS");
    std::string b_checkpoint, b_data, b_split = "test";
    int b_batch = 8, b_stride = 0, b_audios = 16, b_repeats = 10;
    uint64_t b_seed = 0;
    bench->add_option("--checkpoint", b_checkpoint, "trained checkpoint")->required();
    bench->add_option("--data", b_data, "dataset directory")->required();
    bench->add_option("--split", b_split, "dataset split to read audios from");
    bench->add_option("--batch", b_batch, "batch size");
    bench->add_option("--stride", b_stride, "skip stride override");
    bench->add_option("--audios", b_audios, "number of audios to benchmark");
    bench->add_option("--repeats", b_repeats, "timed repeats");
    bench->add_option("--seed", b_seed, "base sampling seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            RunConfig cfg = resolve_config(gen_opts);
            cfg.out_dir = gen_out;
            if (gen_seed_set) cfg.seed = gen_seed;
            return cmd_gen(cfg, gen_force);
        }
        if (train->parsed()) {
            RunConfig cfg = resolve_config(train_opts);
            cfg.data_dir = train_data;
            cfg.out_dir = train_out;
            if (!train_variant.empty()) cfg.variant = train_variant;
            if (train_epochs > 0) cfg.epochs = train_epochs;
            if (codec_only) cfg.codec_only = 1;
            if (train_seed_set) cfg.seed = train_seed;
            return cmd_train(cfg, train_resume);
        }
        if (sample->parsed())
            return cmd_sample(s_checkpoint, s_wavs, s_list, s_out, s_num, s_seed, s_guidance,
                              s_stride);
        if (eval->parsed()) return cmd_eval(e_hyp, e_ref, e_corpus);
        if (bench->parsed())
            return cmd_bench(b_checkpoint, b_data, b_split, b_batch, b_stride, b_audios,
                             b_repeats, b_seed);
    } catch (const dac::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
