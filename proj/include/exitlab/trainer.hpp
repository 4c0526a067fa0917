#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "exitlab/model.hpp"

namespace exitlab {

enum class TrainRegime { Standard, Joint };

std::string to_string(TrainRegime r);
TrainRegime train_regime_from_string(const std::string& s);

struct TrainSettings {
    TrainRegime regime = TrainRegime::Standard;
    int steps = 1000;
    int batch_size = 8;
    int seq_len = 128;
    float learning_rate = 1e-3f;
    uint64_t seed = 0;
    std::vector<float> layer_loss_weights; // Joint only; empty = uniform
    int warmup_steps = 100;

    void validate(const ModelConfig& cfg) const;
};

// -ln dist[target] with a 1e-9 probability floor.
double cross_entropy(const std::vector<float>& dist, int target);

// sum_l weights[l] * cross_entropy(dists[l], target) / sum(weights).
double joint_loss(const std::vector<std::vector<float>>& per_layer_dists, int target,
                  const std::vector<float>& weights);

struct Batch {
    // parallel arrays of sequences; targets are the inputs shifted by one
    std::vector<std::vector<int>> inputs;
    std::vector<std::vector<int>> targets;
};

// Mean loss of the batch under the regime; teacher-forced full-attention
// forward, no cache. Grads (if non-null) receive accumulated gradients.
double loss_and_grads(const ModelConfig& cfg, const Weights& w, const Batch& batch,
                      const TrainSettings& settings, Weights* grads);

struct AdamState {
    Weights m, v;
    int step = 0;
};

AdamState make_adam_state(const ModelConfig& cfg);

// One optimizer step in place; returns the mean batch loss.
double train_step(const ModelConfig& cfg, Weights& w, AdamState& opt, const Batch& batch,
                  const TrainSettings& settings);

struct TrainResult {
    Weights weights;
    std::vector<std::pair<int, double>> loss_curve; // (step, loss)
};

// Seeded end-to-end training on a token corpus.
TrainResult train_run(const ModelConfig& cfg, const std::vector<int>& corpus, const TrainSettings& settings);

// Seeded batch sampling used by train_run; exposed so evaluations can draw
// held-out batches the same way.
Batch sample_batch(const std::vector<int>& corpus, int batch_size, int seq_len, uint64_t seed, int step);

// Mean cross-entropy of intermediate layers (1..N-1) through the shared
// head on the given batch; used for regime comparisons.
double mean_intermediate_cross_entropy(const ModelConfig& cfg, const Weights& w, const Batch& batch);

} // namespace exitlab
