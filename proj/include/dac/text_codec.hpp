#pragma once

#include <string>
#include <vector>

#include "dac/layers.hpp"

namespace dac {

// Word-level vocabulary with fixed reserved ids.
struct Vocab {
    static constexpr int PAD = 0;
    static constexpr int BOS = 1;
    static constexpr int EOS = 2;
    static constexpr int UNK = 3;
    static constexpr int RESERVED = 4;

    std::vector<std::string> words;  // id = RESERVED + index
    std::unordered_map<std::string, int> ids;

    int size() const { return RESERVED + static_cast<int>(words.size()); }

    int id_of(const std::string& w) const {
        auto it = ids.find(w);
        return it == ids.end() ? UNK : it->second;
    }

    const std::string& word_of(int id) const;
};

// Fixed-capacity token sequence: BOS + words + EOS, padded to max_len.
// valid marks positions up to and including EOS.
struct TokenSeq {
    std::vector<int> ids;
    std::vector<uint8_t> valid;

    int length() const { return static_cast<int>(ids.size()); }
    int valid_count() const {
        int n = 0;
        for (uint8_t v : valid) n += v ? 1 : 0;
        return n;
    }
};

struct CodecConfig {
    int max_len = 40;
    int embed_dim = 128;
    double sigma0 = 0.1;
    int transition_layers = 2;
    std::string lm_head = "linear";
};

// Lowercase, strip punctuation to spaces, split on whitespace.
std::vector<std::string> normalize_words(const std::string& text);

// Deterministic id assignment: frequency desc, then lexicographic, after the
// reserved ids.
Vocab build_vocab(const std::vector<std::string>& corpus);

TokenSeq tokenize(const std::string& text, const Vocab& vocab, int max_len);
std::string detokenize(const TokenSeq& seq, const Vocab& vocab);

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

// Serialize/parse the word list for embedding in checkpoint config snapshots.
std::string vocab_to_line(const Vocab& vocab);
Vocab vocab_from_line(const std::string& line);

// ---- continuous codec (embedding + rounding) -----------------------------------

template <typename T>
struct CodecParams {
    int embed_table = -1;  // V x D
    std::vector<BlockP> transition;
    LayerNormP final_ln;
    LinearP lm_head;     // D -> V
    LinearP valid_head;  // D -> 1
};

template <typename T>
CodecParams<T> make_codec(ParamStore<T>& ps, Rng& rng, const CodecConfig& cfg, int vocab_size,
                          int heads) {
    DAC_CHECK_CFG(cfg.embed_dim >= 8, "embed_dim must be >= 8, got ", cfg.embed_dim);
    DAC_CHECK_CFG(cfg.sigma0 >= 0.0, "sigma0 must be >= 0, got ", cfg.sigma0);
    DAC_CHECK_CFG(cfg.lm_head == "linear", "unsupported lm_head type '", cfg.lm_head, "'");
    CodecParams<T> p;
    p.embed_table = ps.add("codec.embed", Tensor<T>::randn({vocab_size, cfg.embed_dim}, rng, 1.0));
    for (int i = 0; i < cfg.transition_layers; ++i)
        p.transition.push_back(make_block(ps, rng, "codec.trans" + std::to_string(i), cfg.embed_dim,
                                          heads, /*cross=*/false));
    if (cfg.transition_layers > 0)
        p.final_ln = make_layer_norm(ps, "codec.ln_f", static_cast<int64_t>(cfg.embed_dim));
    p.lm_head = make_linear(ps, rng, "codec.lm", cfg.embed_dim, vocab_size);
    p.valid_head = make_linear(ps, rng, "codec.valid", cfg.embed_dim, 1);
    return p;
}

// x0 = E(d) + sigma0 * z, z ~ N(0, I). Null rng or sigma0 == 0 gives the
// exact table lookup.
template <typename T>
typename Graph<T>::NodeId embed_tokens(Graph<T>& g, ParamStore<T>& ps, const CodecParams<T>& p,
                                       const TokenSeq& seq, T sigma0, Rng* rng) {
    auto x = g.embedding(g.param(ps, p.embed_table), seq.ids);
    if (rng != nullptr && sigma0 > T(0)) {
        Tensor<T> noise = Tensor<T>::randn(g.value(x).shape, *rng, static_cast<double>(sigma0));
        x = g.add(x, g.constant(std::move(noise), "embed_noise"));
    }
    return x;
}

template <typename T>
struct RoundOut {
    typename Graph<T>::NodeId logits = -1;        // L x V
    typename Graph<T>::NodeId valid_logits = -1;  // L x 1
};

// Transition block maps the latent to textual space; the LM head emits
// per-position token logits, the valid head scores valid-vs-padding.
template <typename T>
RoundOut<T> round_latent_nodes(Graph<T>& g, ParamStore<T>& ps, const CodecParams<T>& p,
                               typename Graph<T>::NodeId x0) {
    auto h = x0;
    for (const auto& blk : p.transition) h = block_forward(g, ps, h, blk);
    if (!p.transition.empty()) h = layer_norm(g, ps, h, p.final_ln);
    RoundOut<T> out;
    out.logits = linear(g, ps, h, p.lm_head);
    out.valid_logits = linear(g, ps, h, p.valid_head);
    return out;
}

// Greedy argmax decode with first-EOS termination; positions after the first
// EOS are forced PAD and masked invalid. Without a predicted EOS every
// position stays valid.
TokenSeq decode_logits(const TensorF& logits);

template <typename T>
TokenSeq round_latent(Graph<T>& g, ParamStore<T>& ps, const CodecParams<T>& p,
                      typename Graph<T>::NodeId x0, Tensor<T>* logits_out = nullptr,
                      Tensor<T>* valid_out = nullptr) {
    RoundOut<T> ro = round_latent_nodes(g, ps, p, x0);
    const Tensor<T>& logits = g.value(ro.logits);
    if (logits_out) *logits_out = logits;
    if (valid_out) *valid_out = g.value(ro.valid_logits);
    return decode_logits(logits.template cast<float>());
}

}  // namespace dac
