#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "exitlab/io.hpp"
#include "exitlab/model.hpp"
#include "exitlab/rng.hpp"

namespace testutil {

inline exitlab::ModelConfig micro_config(int layers = 2, int d_model = 8, int heads = 2, int d_ffn = 16,
                                         int vocab = 16, int max_seq = 64, uint64_t seed = 7) {
    exitlab::ModelConfig c;
    c.n_layers = layers;
    c.d_model = d_model;
    c.n_heads = heads;
    c.d_head = d_model / heads;
    c.d_ffn = d_ffn;
    c.vocab_size = vocab;
    c.max_seq_len = max_seq;
    c.seed = seed;
    return c;
}

// Small synthetic English-like corpus: deterministic, word-structured, with
// enough variety for byte-level language modeling.
inline std::string make_corpus(size_t approx_bytes, uint64_t seed = 11) {
    static const char* words[] = {"the",  "quick", "brown", "fox",   "jumps", "over",  "lazy",  "dog",
                                  "a",    "model", "layer", "token", "cache", "early", "exit",  "deep",
                                  "state", "value", "key",  "head",  "and",   "runs",  "fast",  "slow",
                                  "first", "last",  "word", "line",  "time",  "gate"};
    const size_t n_words = sizeof(words) / sizeof(words[0]);
    exitlab::SeqRng rng(seed);
    std::string out;
    out.reserve(approx_bytes + 16);
    size_t in_sentence = 0;
    while (out.size() < approx_bytes) {
        out += words[rng.next_below(n_words)];
        ++in_sentence;
        if (in_sentence >= 6 + rng.next_below(6)) {
            out += ".\n";
            in_sentence = 0;
        } else {
            out += ' ';
        }
    }
    return out;
}

inline std::vector<int> corpus_tokens(const std::string& text) { return exitlab::tokenize(text).ids; }

// Random word vocabulary: n_words distinct lowercase words of length 3..7.
inline std::vector<std::string> synthetic_vocab(int n_words, uint64_t seed) {
    exitlab::SeqRng rng(seed);
    std::vector<std::string> words;
    while (static_cast<int>(words.size()) < n_words) {
        const int len = 3 + static_cast<int>(rng.next_below(5));
        std::string w;
        for (int i = 0; i < len; ++i) w += static_cast<char>('a' + rng.next_below(26));
        if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
    }
    return words;
}

// Sentences of 6..12 uniformly drawn words, one per line, period-terminated.
// Word identity carries most of the byte-level entropy, so corpus difficulty
// scales with the vocabulary size.
inline std::string word_corpus(const std::vector<std::string>& words, int n_lines, uint64_t seed) {
    exitlab::SeqRng rng(seed);
    std::string out;
    for (int l = 0; l < n_lines; ++l) {
        const int n = 6 + static_cast<int>(rng.next_below(7));
        for (int i = 0; i < n; ++i) {
            if (i) out += ' ';
            out += words[rng.next_below(words.size())];
        }
        out += ".\n";
    }
    return out;
}

// Random normalized distribution of the given size.
inline std::vector<float> random_dist(exitlab::SeqRng& rng, int n) {
    std::vector<float> d(static_cast<size_t>(n));
    float sum = 0.0f;
    for (auto& v : d) {
        v = static_cast<float>(rng.next_uniform()) + 1e-4f;
        sum += v;
    }
    for (auto& v : d) v /= sum;
    return d;
}

inline std::vector<int> random_prompt(exitlab::SeqRng& rng, int len, int vocab) {
    std::vector<int> p(static_cast<size_t>(len));
    for (auto& t : p) t = static_cast<int>(rng.next_below(static_cast<uint64_t>(vocab)));
    return p;
}

} // namespace testutil
