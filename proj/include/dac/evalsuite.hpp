#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dac/audio.hpp"
#include "dac/text_codec.hpp"

namespace dac {

using Tokens = std::vector<std::string>;

struct EvalItem {
    Tokens hyp;
    std::vector<Tokens> refs;
};

using EvalCorpus = std::vector<EvalItem>;

// Corpus-level BLEU-n: clipped modified n-gram precision, geometric mean over
// 1..n, brevity penalty with the closest-reference-length rule.
double bleu_n(const EvalCorpus& corpus, int n);

// Mean over items of the max-over-references LCS F-measure with beta = 1.2.
double rouge_l(const EvalCorpus& corpus, double beta = 1.2);

// tf-idf cosine over n = 1..4 n-grams (idf from the reference corpus),
// averaged over n and scaled by 10, with a Gaussian length penalty
// (sigma = 6). Needs >= 2 items for document frequencies.
double cider(const EvalCorpus& corpus, double sigma = 6.0, int max_n = 4);

// unique n-grams / total n-grams pooled over all captions.
double distinct_n(const std::vector<Tokens>& captions, int n);

// Measure of textual lexical diversity: factor counting against a running
// type-token-ratio threshold, mean of the forward and reversed passes.
double mtld(const Tokens& tokens, double threshold = 0.72);

struct MetricReport {
    std::map<std::string, double> scores;
    std::vector<std::string> not_computed;  // out-of-scope metric placeholders
    double total_seconds = 0.0;
    int64_t token_count = 0;
    int64_t audio_count = 0;

    std::string kv() const;
    std::string table() const;
};

// The full in-scope battery over one corpus; out-of-scope metrics are listed
// as explicit placeholders so reports stay table-shaped.
MetricReport evaluate_corpus(const EvalCorpus& corpus);

// Line format: hypothesis TAB reference[TAB reference...].
EvalCorpus load_eval_corpus(const std::string& path);
EvalCorpus make_corpus(const std::vector<std::string>& hyps,
                       const std::vector<std::vector<std::string>>& refs);

struct SpeedReport {
    double tps = 0.0;  // generated tokens (pre-PAD) per second, mean of runs
    double aps = 0.0;  // audios per second, mean of runs
    std::vector<double> tps_runs;
    std::vector<double> aps_runs;
    int64_t token_count = 0;
    int64_t audio_count = 0;
    double total_seconds = 0.0;
};

using Captioner = std::function<std::vector<TokenSeq>(const std::vector<Waveform>&)>;

// Repeats the whole pass `repeats` times after 2 warmup batches and reports
// mean TPS/APS.
SpeedReport benchmark_speed(const Captioner& captioner, const std::vector<Waveform>& audios,
                            int batch_size, int repeats = 10);

}  // namespace dac
