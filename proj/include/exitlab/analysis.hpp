#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "exitlab/decoder.hpp"
#include "exitlab/model.hpp"

namespace exitlab {

struct ExitStats {
    int max_layer = 0;          // = N
    double avg_optimal_exit = 0.0;
    double perc_early = 0.0;    // fraction with optimal exit < N
    int token_count = 0;
};

// Max/Avg/Perc over traces from a full-compute run.
ExitStats optimal_exit_stats(const std::vector<ExitTrace>& traces, int n_layers);

// (bucket start position, mean optimal exit); empty buckets omitted.
std::vector<std::pair<int, double>> exit_vs_position(const std::vector<ExitTrace>& traces, int bucket_size);

// Mean max-confidence per layer (index 0 = layer 1).
std::vector<double> confidence_per_layer(const std::vector<ExitTrace>& traces, int n_layers);

// Smallest 1-based layer where the mean confidence curve exceeds the given
// level, or nullopt when it never does.
std::optional<int> confidence_crossing_layer(const std::vector<double>& curve, double level);

struct GateDistance {
    double mean_abs = 0.0;
    double mean_signed = 0.0;        // gate - optimal
    double excluded_fraction = 0.0;  // tail dropped after the first divergence
    int aligned_tokens = 0;
};

// Position-aligned distances between a gate run and the full-compute run;
// alignment stops at the first token mismatch.
GateDistance gate_distance(const std::vector<ExitTrace>& full_traces,
                           const std::vector<ExitTrace>& gate_traces);

double js_divergence(const std::vector<float>& p, const std::vector<float>& q);

double cosine_similarity(const std::vector<float>& u, const std::vector<float>& v);

struct SimilarityMatrices {
    std::vector<std::vector<double>> cosine; // (N+1) x (N+1): embedding + layer outputs
    std::vector<std::vector<double>> jsd;    // N x N over per-layer distributions
};

// Requires states from a full-compute step with logits recorded.
SimilarityMatrices similarity_matrices(const PerLayerStates& states);

struct SubwordStats {
    std::optional<std::pair<double, double>> prefix; // (mean exit, population share)
    std::optional<std::pair<double, double>> suffix;
};

SubwordStats subword_exit_stats(const std::vector<ExitTrace>& traces, bool use_optimal = true);

struct TopEntry {
    int token;
    float prob; // raw logit value in identity mode
};

struct SublayerTrace {
    // per layer: top-k lists for each tap, projected through the shared head
    struct LayerTaps {
        std::vector<TopEntry> block_out;  // h_out
        std::vector<TopEntry> skip;       // h_attn
        std::vector<TopEntry> ffn_module; // FFN(h_attn)
        std::vector<TopEntry> attn_module; // ATTN(h_prev)
    };
    std::vector<LayerTaps> layers;
    bool identity_mode = false;
};

// identity_mode skips the final norm so the skip-connection additivity
// W h_out = W ffn + W h_attn holds exactly up to f32 accumulation.
SublayerTrace sublayer_topk(const ModelConfig& cfg, const Weights& w, const PerLayerStates& states, int k,
                            bool identity_mode);

// Fraction of duplicated 4-grams in a token sequence; 0 when fewer than two
// 4-grams exist.
double repetition_rate(const std::vector<int>& tokens, int n = 4);

} // namespace exitlab
