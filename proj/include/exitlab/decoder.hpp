#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "exitlab/gating.hpp"
#include "exitlab/kv_cache.hpp"
#include "exitlab/model.hpp"
#include "exitlab/rng.hpp"

namespace exitlab {

struct Sampler {
    enum class Kind { Greedy, TopK };
    Kind kind = Kind::Greedy;
    int k = 1;
    float temperature = 1.0f;
    uint64_t seed = 0;
};

struct DecodeSettings {
    int max_new_tokens = 64;
    Sampler sampler;
    GateKind gate;
    KvPolicy kv_policy = KvPolicy::FullCompute;
    int warmup_tokens = 0; // first generated tokens forced to exit at N
    int stop_token = -1;   // -1: never stop early
    bool record_layer_stats = true; // per-layer argmax/confidence in traces

    void validate(const ModelConfig& cfg) const;
};

struct ExitTrace {
    int position = 0;   // index among generated tokens
    int token = 0;
    int exit_layer = 0; // 1-based
    std::optional<int> optimal_exit_layer;
    std::vector<int> layer_argmax;        // per evaluated layer
    std::vector<float> layer_confidence;  // per evaluated layer
    int64_t wall_ns = 0;
    bool is_word_prefix = false;
};

struct DecodeResult {
    std::vector<int> tokens;       // generated tokens only
    std::vector<ExitTrace> traces; // one per generated token
    int64_t wall_ns = 0;
};

// Full-depth decoding; every trace carries the optimal (ideal) exit layer
// plus per-layer argmax/confidence. exit_layer is N for every token.
DecodeResult decode_full(const ModelConfig& cfg, const Weights& w, const std::vector<int>& prompt,
                         const DecodeSettings& settings);

// Token-level early exit with the configured gate and KV policy. The Ideal
// gate is only accepted together with the FullCompute policy.
DecodeResult decode_early_exit(const ModelConfig& cfg, const Weights& w, const std::vector<int>& prompt,
                               const DecodeSettings& settings);

// Teacher-forced tracing over a fixed token sequence: one trace per predicted
// position (predicting tokens[i+1] from the prefix through tokens[i]), with
// per-layer argmax/confidence and the optimal exit layer. No sampling; the
// traced token is the actual next token.
std::vector<ExitTrace> trace_forced(const ModelConfig& cfg, const Weights& w,
                                    const std::vector<int>& tokens);

// Renormalized sampling over the k most probable entries after temperature
// scaling; deterministic for a given rng state.
int sample_top_k(const std::vector<float>& dist, int k, float temperature, SeqRng& rng);

struct Speedup {
    double theoretical = 1.0;
    double wall_clock = 1.0;
};

// theoretical = T*N / sum(exit layers); wall_clock = baseline_ns / run_ns.
Speedup measure_speedup(const std::vector<ExitTrace>& traces, int n_layers, int64_t baseline_ns,
                        int64_t run_ns);

double theoretical_speedup(const std::vector<ExitTrace>& traces, int n_layers);

struct ThresholdSearchResult {
    double tau = 0.0;        // for Patience this is the integer count
    double metric = 0.0;     // token exact-match rate vs full-model greedy
    double speedup = 1.0;    // theoretical
    bool floor_met = false;
};

// Grid search over thresholds; among points whose exact-match rate against
// the full-model greedy output reaches quality_floor * full metric, picks
// the one with the highest theoretical speed-up.
ThresholdSearchResult threshold_search(const ModelConfig& cfg, const Weights& w,
                                       const std::vector<std::vector<int>>& eval_prompts,
                                       GateFamily family, const std::vector<double>& grid,
                                       double quality_floor, const DecodeSettings& base);

// Default grids: Confidence {0.5..0.95 step 0.05, 0.99}; Entropy {0.1..2.0
// step 0.1}; Patience {1..N-1}.
std::vector<double> default_grid(GateFamily family, int n_layers);

// Fraction of positions where the two outputs agree, over the longer length.
double exact_match_rate(const std::vector<int>& reference, const std::vector<int>& candidate);

} // namespace exitlab
