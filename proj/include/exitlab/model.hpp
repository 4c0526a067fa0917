#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace exitlab {

struct ModelConfig {
    int n_layers = 8;
    int d_model = 128;
    int n_heads = 4;
    int d_head = 32;
    int d_ffn = 512;
    int vocab_size = 258;
    int max_seq_len = 512;
    float norm_epsilon = 1e-5f;
    uint64_t seed = 0;
};

// Throws ConfigError on bad dimension relations.
void validate_config(const ModelConfig& cfg);

struct Weights {
    struct Layer {
        std::vector<float> wq, wk, wv, wo; // [d_model x d_model]
        std::vector<float> w1;             // [d_ffn x d_model]
        std::vector<float> w2;             // [d_model x d_ffn]
        std::vector<float> attn_gain, ffn_gain; // [d_model]
    };

    std::vector<float> token_embedding; // [vocab_size x d_model]
    std::vector<Layer> layers;
    std::vector<float> final_gain; // [d_model]
    std::vector<float> output_head; // [vocab_size x d_model], the single shared head
};

struct TensorRef {
    std::string name;
    std::vector<int> shape;
    std::vector<float>* data;
};

// Fixed-order list of all tensors; the order defines the model file layout
// and the optimizer state layout.
std::vector<TensorRef> tensor_list(Weights& w);

Weights init_model(const ModelConfig& cfg);
Weights zeros_like(const ModelConfig& cfg);

// Fingerprint over all tensor bytes in tensor_list order.
uint64_t weights_checksum(const Weights& w);

bool weights_finite(const Weights& w);

struct KvView; // kv_cache.hpp

struct BlockResult {
    std::vector<float> h_attn;   // attention residual output
    std::vector<float> h_out;    // block output
    std::vector<float> attn_out; // attention module output
    std::vector<float> ffn_out;  // ffn module output
    std::vector<float> k, v;     // this token's projections at this layer
};

// One pre-norm block for one token. `past` must cover every earlier position
// at this layer.
BlockResult forward_block(const ModelConfig& cfg, const Weights& w, const std::vector<float>& h_prev,
                          int layer, int position, const KvView& past);

struct PerLayerStates {
    std::vector<float> h_in;                   // embedding of the input token
    std::vector<std::vector<float>> h_attn;    // per layer
    std::vector<std::vector<float>> h_out;     // per layer
    std::vector<std::vector<float>> attn_out;  // per layer
    std::vector<std::vector<float>> ffn_out;   // per layer
    std::vector<std::vector<float>> logits;    // per layer, optional (empty when not requested)
    std::vector<std::vector<float>> dists;     // per layer, optional
};

class KvCache;

// Runs all N blocks for one token, appending K/V at every layer.
// When with_logits is set, per-layer logits/distributions are filled in.
PerLayerStates forward_all_layers(const ModelConfig& cfg, const Weights& w, int token, int position,
                                  KvCache& cache, bool with_logits = false);

// Final norm followed by the shared output head.
std::vector<float> project_logits(const ModelConfig& cfg, const Weights& w, const std::vector<float>& h);

// Shared head on the raw (un-normalized) state; used by the sub-layer
// additivity analysis where linearity must hold.
std::vector<float> project_logits_identity(const ModelConfig& cfg, const Weights& w, const std::vector<float>& h);

std::vector<float> softmax(std::vector<float> logits);

} // namespace exitlab
