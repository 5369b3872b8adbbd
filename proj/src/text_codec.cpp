#include "dac/text_codec.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace dac {

const std::string& Vocab::word_of(int id) const {
    static const std::string reserved[] = {"<pad>", "<bos>", "<eos>", "<unk>"};
    DAC_CHECK(id >= 0 && id < size(), "token id ", id, " out of range [0,", size(), ")");
    if (id < RESERVED) return reserved[id];
    return words[static_cast<size_t>(id - RESERVED)];
}

std::vector<std::string> normalize_words(const std::string& text) {
    std::string clean;
    clean.reserve(text.size());
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c))
            clean.push_back(static_cast<char>(std::tolower(c)));
        else
            clean.push_back(' ');
    }
    std::vector<std::string> out;
    std::istringstream is(clean);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

Vocab build_vocab(const std::vector<std::string>& corpus) {
    DAC_CHECK(!corpus.empty(), "empty corpus");
    std::map<std::string, int64_t> freq;
    for (const auto& line : corpus)
        for (const auto& w : normalize_words(line)) freq[w]++;
    std::vector<std::pair<std::string, int64_t>> order(freq.begin(), freq.end());
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab v;
    for (auto& [w, n] : order) {
        v.ids.emplace(w, v.size());
        v.words.push_back(w);
    }
    return v;
}

TokenSeq tokenize(const std::string& text, const Vocab& vocab, int max_len) {
    auto words = normalize_words(text);
    if (static_cast<int>(words.size()) > max_len - 2) words.resize(static_cast<size_t>(max_len - 2));
    TokenSeq seq;
    seq.ids.assign(static_cast<size_t>(max_len), Vocab::PAD);
    seq.valid.assign(static_cast<size_t>(max_len), 0);
    int pos = 0;
    seq.ids[static_cast<size_t>(pos)] = Vocab::BOS;
    seq.valid[static_cast<size_t>(pos++)] = 1;
    for (const auto& w : words) {
        seq.ids[static_cast<size_t>(pos)] = vocab.id_of(w);
        seq.valid[static_cast<size_t>(pos++)] = 1;
    }
    seq.ids[static_cast<size_t>(pos)] = Vocab::EOS;
    seq.valid[static_cast<size_t>(pos)] = 1;
    return seq;
}

std::string detokenize(const TokenSeq& seq, const Vocab& vocab) {
    std::string out;
    for (int i = 0; i < seq.length(); ++i) {
        int id = seq.ids[static_cast<size_t>(i)];
        DAC_CHECK(id < vocab.size(), "token id ", id, " out of range [0,", vocab.size(), ")");
        if (id == Vocab::EOS) break;
        if (id == Vocab::PAD || id == Vocab::BOS) continue;
        if (!out.empty()) out += ' ';
        out += vocab.word_of(id);
    }
    return out;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
    std::ofstream f(path);
    DAC_CHECK(f.good(), "cannot write vocab file ", path);
    for (const auto& w : vocab.words) f << w << "\n";
}

Vocab load_vocab(const std::string& path) {
    std::ifstream f(path);
    DAC_CHECK(f.good(), "cannot read vocab file ", path);
    Vocab v;
    std::string w;
    while (std::getline(f, w)) {
        if (w.empty()) continue;
        v.ids.emplace(w, v.size());
        v.words.push_back(w);
    }
    return v;
}

std::string vocab_to_line(const Vocab& vocab) {
    std::string s;
    for (size_t i = 0; i < vocab.words.size(); ++i) {
        if (i) s += ' ';
        s += vocab.words[i];
    }
    return s;
}

Vocab vocab_from_line(const std::string& line) {
    Vocab v;
    std::istringstream is(line);
    std::string w;
    while (is >> w) {
        v.ids.emplace(w, v.size());
        v.words.push_back(w);
    }
    return v;
}

TokenSeq decode_logits(const TensorF& logits) {
    int64_t len = logits.rows(), v = logits.cols();
    TokenSeq seq;
    seq.ids.assign(static_cast<size_t>(len), Vocab::PAD);
    seq.valid.assign(static_cast<size_t>(len), 0);
    int eos_pos = -1;
    for (int64_t i = 0; i < len; ++i) {
        int best = 0;
        float bv = logits.at(i, 0);
        for (int64_t c = 1; c < v; ++c) {
            if (logits.at(i, c) > bv) {
                bv = logits.at(i, c);
                best = static_cast<int>(c);
            }
        }
        seq.ids[static_cast<size_t>(i)] = best;
        if (best == Vocab::EOS && eos_pos < 0) eos_pos = static_cast<int>(i);
    }
    if (eos_pos < 0) {
        std::fill(seq.valid.begin(), seq.valid.end(), 1);
        return seq;
    }
    for (int i = 0; i <= eos_pos; ++i) seq.valid[static_cast<size_t>(i)] = 1;
    for (int i = eos_pos + 1; i < seq.length(); ++i) seq.ids[static_cast<size_t>(i)] = Vocab::PAD;
    return seq;
}

}  // namespace dac
