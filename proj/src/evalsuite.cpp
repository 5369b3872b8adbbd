#include "dac/evalsuite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace dac {

namespace {

using Counts = std::map<std::vector<std::string>, int64_t>;

Counts ngram_counts(const Tokens& toks, int n) {
    Counts c;
    if (static_cast<int>(toks.size()) < n) return c;
    for (size_t i = 0; i + static_cast<size_t>(n) <= toks.size(); ++i)
        c[std::vector<std::string>(toks.begin() + static_cast<int64_t>(i),
                                   toks.begin() + static_cast<int64_t>(i) + n)] += 1;
    return c;
}

}  // namespace

double bleu_n(const EvalCorpus& corpus, int n) {
    DAC_CHECK(!corpus.empty(), "empty evaluation corpus");
    DAC_CHECK(1 <= n && n <= 4, "bleu order must be in [1,4], got ", n);
    int64_t hyp_len = 0, ref_len = 0;
    for (const auto& item : corpus) {
        DAC_CHECK(!item.refs.empty(), "item without references");
        hyp_len += static_cast<int64_t>(item.hyp.size());
        // Closest reference length; ties go to the shorter reference.
        int64_t best = static_cast<int64_t>(item.refs[0].size());
        for (const auto& r : item.refs) {
            int64_t len = static_cast<int64_t>(r.size());
            int64_t h = static_cast<int64_t>(item.hyp.size());
            if (std::abs(len - h) < std::abs(best - h) ||
                (std::abs(len - h) == std::abs(best - h) && len < best))
                best = len;
        }
        ref_len += best;
    }
    if (hyp_len == 0) return 0.0;
    double log_prec = 0.0;
    for (int order = 1; order <= n; ++order) {
        int64_t matched = 0, total = 0;
        for (const auto& item : corpus) {
            Counts hc = ngram_counts(item.hyp, order);
            Counts clip;
            for (const auto& r : item.refs) {
                for (auto& [gram, cnt] : ngram_counts(r, order)) {
                    auto it = clip.find(gram);
                    if (it == clip.end() || it->second < cnt) clip[gram] = cnt;
                }
            }
            for (auto& [gram, cnt] : hc) {
                total += cnt;
                auto it = clip.find(gram);
                if (it != clip.end()) matched += std::min(cnt, it->second);
            }
        }
        if (total == 0 || matched == 0) return 0.0;
        log_prec += std::log(static_cast<double>(matched) / static_cast<double>(total));
    }
    double bp = hyp_len < ref_len
                    ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
                    : 1.0;
    return bp * std::exp(log_prec / n);
}

namespace {

int64_t lcs_length(const Tokens& a, const Tokens& b) {
    size_t n = a.size(), m = b.size();
    std::vector<int64_t> prev(m + 1, 0), cur(m + 1, 0);
    for (size_t i = 1; i <= n; ++i) {
        for (size_t j = 1; j <= m; ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
        std::fill(cur.begin(), cur.end(), 0);
    }
    return prev[m];
}

}  // namespace

double rouge_l(const EvalCorpus& corpus, double beta) {
    DAC_CHECK(!corpus.empty(), "empty evaluation corpus");
    double acc = 0.0;
    for (const auto& item : corpus) {
        DAC_CHECK(!item.refs.empty(), "item without references");
        double best = 0.0;
        for (const auto& ref : item.refs) {
            if (item.hyp.empty() || ref.empty()) continue;
            double lcs = static_cast<double>(lcs_length(item.hyp, ref));
            if (lcs == 0.0) continue;
            double p = lcs / static_cast<double>(item.hyp.size());
            double r = lcs / static_cast<double>(ref.size());
            double f = (1.0 + beta * beta) * p * r / (r + beta * beta * p);
            best = std::max(best, f);
        }
        acc += best;
    }
    return acc / static_cast<double>(corpus.size());
}

double cider(const EvalCorpus& corpus, double sigma, int max_n) {
    DAC_CHECK(corpus.size() >= 2, "idf undefined: corpus needs >= 2 items, got ", corpus.size());
    double n_items = static_cast<double>(corpus.size());
    double score = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        // Document frequency over items (an item counts once per gram no
        // matter how many of its references contain it).
        Counts df;
        for (const auto& item : corpus) {
            std::set<std::vector<std::string>> grams;
            for (const auto& r : item.refs)
                for (auto& [g, c] : ngram_counts(r, n)) grams.insert(g);
            for (const auto& g : grams) df[g] += 1;
        }
        auto idf = [&](const std::vector<std::string>& g) {
            auto it = df.find(g);
            int64_t d = it == df.end() ? 0 : it->second;
            return std::log(n_items) - std::log(static_cast<double>(std::max<int64_t>(d, 1)));
        };
        double level = 0.0;
        for (const auto& item : corpus) {
            Counts hc = ngram_counts(item.hyp, n);
            double hnorm = 0.0;
            for (auto& [g, c] : hc) {
                double w = static_cast<double>(c) * idf(g);
                hnorm += w * w;
            }
            hnorm = std::sqrt(hnorm);
            double item_sim = 0.0;
            for (const auto& ref : item.refs) {
                Counts rc = ngram_counts(ref, n);
                double rnorm = 0.0, dot = 0.0;
                for (auto& [g, c] : rc) {
                    double w = static_cast<double>(c) * idf(g);
                    rnorm += w * w;
                    auto it = hc.find(g);
                    if (it != hc.end()) dot += w * static_cast<double>(it->second) * idf(g);
                }
                rnorm = std::sqrt(rnorm);
                double cos = (hnorm > 0.0 && rnorm > 0.0) ? dot / (hnorm * rnorm) : 0.0;
                double dl = static_cast<double>(item.hyp.size()) - static_cast<double>(ref.size());
                double penalty = std::exp(-dl * dl / (2.0 * sigma * sigma));
                item_sim += penalty * cos;
            }
            level += item_sim / static_cast<double>(item.refs.size());
        }
        score += level / n_items;
    }
    return 10.0 * score / static_cast<double>(max_n);
}

double distinct_n(const std::vector<Tokens>& captions, int n) {
    DAC_CHECK(n >= 1, "distinct order must be >= 1");
    std::set<std::vector<std::string>> unique;
    int64_t total = 0;
    for (const auto& cap : captions) {
        for (auto& [g, c] : ngram_counts(cap, n)) {
            unique.insert(g);
            total += c;
        }
    }
    DAC_CHECK(total >= 1, "all captions shorter than n=", n);
    return static_cast<double>(unique.size()) / static_cast<double>(total);
}

namespace {

// One directional MTLD pass: count completed factors plus the partial factor.
double mtld_factors(const Tokens& toks, double threshold) {
    double factors = 0.0;
    std::set<std::string> types;
    int64_t count = 0;
    for (const auto& t : toks) {
        types.insert(t);
        count += 1;
        double ttr = static_cast<double>(types.size()) / static_cast<double>(count);
        if (ttr < threshold) {
            factors += 1.0;
            types.clear();
            count = 0;
        }
    }
    if (count > 0) {
        double ttr = static_cast<double>(types.size()) / static_cast<double>(count);
        factors += (1.0 - ttr) / (1.0 - threshold);
    }
    return factors;
}

}  // namespace

double mtld(const Tokens& tokens, double threshold) {
    DAC_CHECK(!tokens.empty(), "mtld over empty input");
    double n = static_cast<double>(tokens.size());
    Tokens rev(tokens.rbegin(), tokens.rend());
    double ff = mtld_factors(tokens, threshold);
    double fb = mtld_factors(rev, threshold);
    double fwd = ff > 0.0 ? n / ff : n;
    double bwd = fb > 0.0 ? n / fb : n;
    return 0.5 * (fwd + bwd);
}

std::string MetricReport::kv() const {
    std::ostringstream os;
    os.precision(9);
    for (const auto& [k, v] : scores) os << k << "=" << v << "\n";
    for (const auto& k : not_computed) os << k << "=not_computed\n";
    if (audio_count > 0) {
        os << "total_seconds=" << total_seconds << "\n";
        os << "token_count=" << token_count << "\n";
        os << "audio_count=" << audio_count << "\n";
    }
    return os.str();
}

std::string MetricReport::table() const {
    std::ostringstream os;
    os << "+----------------+------------+\n";
    for (const auto& [k, v] : scores) {
        os << "| ";
        os.width(14);
        os << std::left << k << " | ";
        os.width(10);
        os.precision(6);
        os << std::left << v << " |\n";
    }
    for (const auto& k : not_computed) {
        os << "| ";
        os.width(14);
        os << std::left << k << " | ";
        os.width(10);
        os << std::left << "n/a" << " |\n";
    }
    os << "+----------------+------------+\n";
    return os.str();
}

MetricReport evaluate_corpus(const EvalCorpus& corpus) {
    MetricReport rep;
    rep.scores["bleu_1"] = bleu_n(corpus, 1);
    rep.scores["bleu_4"] = bleu_n(corpus, 4);
    rep.scores["rouge_l"] = rouge_l(corpus);
    if (corpus.size() >= 2) rep.scores["cider"] = cider(corpus);
    std::vector<Tokens> hyps;
    Tokens pooled;
    for (const auto& item : corpus) {
        hyps.push_back(item.hyp);
        pooled.insert(pooled.end(), item.hyp.begin(), item.hyp.end());
    }
    rep.scores["distinct_1"] = distinct_n(hyps, 1);
    rep.scores["distinct_2"] = distinct_n(hyps, 2);
    if (!pooled.empty()) rep.scores["mtld"] = mtld(pooled);
    rep.not_computed = {"meteor", "spice", "spider", "clap", "bert_sim", "gpt4_eval"};
    return rep;
}

EvalCorpus load_eval_corpus(const std::string& path) {
    std::ifstream f(path);
    DAC_CHECK(f.good(), "cannot read corpus file ", path);
    EvalCorpus corpus;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        size_t pos = 0;
        while (true) {
            auto tab = line.find('\t', pos);
            if (tab == std::string::npos) {
                cols.push_back(line.substr(pos));
                break;
            }
            cols.push_back(line.substr(pos, tab - pos));
            pos = tab + 1;
        }
        DAC_CHECK(cols.size() >= 2, "corpus row needs hypothesis TAB reference: ", line);
        EvalItem item;
        item.hyp = normalize_words(cols[0]);
        for (size_t i = 1; i < cols.size(); ++i) item.refs.push_back(normalize_words(cols[i]));
        corpus.push_back(std::move(item));
    }
    DAC_CHECK(!corpus.empty(), "empty evaluation corpus in ", path);
    return corpus;
}

EvalCorpus make_corpus(const std::vector<std::string>& hyps,
                       const std::vector<std::vector<std::string>>& refs) {
    DAC_CHECK(hyps.size() == refs.size(), "hypothesis/reference count mismatch: ", hyps.size(),
              " vs ", refs.size());
    EvalCorpus corpus;
    for (size_t i = 0; i < hyps.size(); ++i) {
        EvalItem item;
        item.hyp = normalize_words(hyps[i]);
        for (const auto& r : refs[i]) item.refs.push_back(normalize_words(r));
        corpus.push_back(std::move(item));
    }
    return corpus;
}

SpeedReport benchmark_speed(const Captioner& captioner, const std::vector<Waveform>& audios,
                            int batch_size, int repeats) {
    DAC_CHECK(audios.size() >= 10, "benchmark needs >= 10 audios, got ", audios.size());
    DAC_CHECK(batch_size >= 1 && repeats >= 1, "bad benchmark configuration");
    std::vector<std::vector<Waveform>> batches;
    for (size_t i = 0; i < audios.size(); i += static_cast<size_t>(batch_size))
        batches.emplace_back(audios.begin() + static_cast<int64_t>(i),
                             audios.begin() +
                                 static_cast<int64_t>(std::min(i + static_cast<size_t>(batch_size),
                                                               audios.size())));
    auto run_batch = [&](size_t bi) {
        try {
            return captioner(batches[bi]);
        } catch (const std::exception& e) {
            throw dac::runtime_error(format_msg("captioner failed on batch ", bi, ": ", e.what()));
        }
    };
    // Warmup: 2 batches excluded from timing.
    for (size_t bi = 0; bi < std::min<size_t>(2, batches.size()); ++bi) run_batch(bi);
    SpeedReport rep;
    for (int r = 0; r < repeats; ++r) {
        int64_t tokens = 0, count = 0;
        auto t0 = std::chrono::steady_clock::now();
        for (size_t bi = 0; bi < batches.size(); ++bi) {
            auto seqs = run_batch(bi);
            for (const auto& s : seqs) tokens += s.valid_count();
            count += static_cast<int64_t>(seqs.size());
        }
        auto t1 = std::chrono::steady_clock::now();
        double secs = std::chrono::duration<double>(t1 - t0).count();
        rep.tps_runs.push_back(static_cast<double>(tokens) / secs);
        rep.aps_runs.push_back(static_cast<double>(count) / secs);
        rep.token_count = tokens;
        rep.audio_count = count;
        rep.total_seconds += secs;
    }
    for (double v : rep.tps_runs) rep.tps += v;
    for (double v : rep.aps_runs) rep.aps += v;
    rep.tps /= static_cast<double>(repeats);
    rep.aps /= static_cast<double>(repeats);
    return rep;
}

}  // namespace dac
