#pragma once

#include <optional>
#include <string>
#include <vector>

#include "exitlab/model.hpp"

namespace exitlab {

enum class KvPolicy { FullCompute, CopyLower, Recompute };

std::string to_string(KvPolicy p);
KvPolicy kv_policy_from_string(const std::string& s);

struct Provenance {
    enum class Kind { Computed, CopiedFrom, RecomputedFrom };
    Kind kind = Kind::Computed;
    int source_layer = 0; // the layer the entry was computed at / derived from

    std::string tag() const;
};

// Read-only contiguous K/V rows for attention at one layer.
struct KvView {
    const float* k = nullptr;
    const float* v = nullptr;
    int count = 0;
    int dim = 0; // n_heads * d_head
};

class KvCache {
public:
    KvCache(const ModelConfig& cfg, KvPolicy policy);

    KvPolicy policy() const { return policy_; }

    // Exact entry produced by forward_block at `layer`.
    void append_computed(int position, int layer, const std::vector<float>& k, const std::vector<float>& v);

    // Marks the position's exit layer and keeps its block output around for
    // later materialization of higher layers.
    void record_exit(int position, int exit_layer, const std::vector<float>& h_exit);

    // Fills the (position, target_layer) slot under the active policy.
    // Returns the provenance of the resulting entry.
    Provenance materialize(const Weights& w, int position, int target_layer);

    // Contiguous K/V for positions [0, upto_position) at `layer`,
    // materializing missing entries on demand under CopyLower/Recompute.
    KvView view(const Weights& w, int layer, int upto_position);

    bool has_entry(int position, int layer) const;
    const Provenance& provenance(int position, int layer) const;
    int exit_layer(int position) const;
    int filled_positions() const { return filled_; }

    // K/V rows of one entry (dim floats each).
    const float* entry_k(int position, int layer) const;
    const float* entry_v(int position, int layer) const;

    // position x layer -> provenance tag ("-" where empty), for debugging.
    std::string provenance_grid_json() const;

    // Number of entries at `layer` with the given provenance kind.
    int count_kind(int layer, Provenance::Kind kind) const;

private:
    void check_range(int position, int layer) const;
    float* slot_k(int position, int layer);
    float* slot_v(int position, int layer);

    ModelConfig cfg_;
    KvPolicy policy_;
    int dim_;
    int filled_ = 0; // positions with at least the layer-1 entry
    std::vector<std::vector<float>> k_store_, v_store_; // per layer: max_seq_len x dim
    std::vector<std::vector<std::optional<Provenance>>> prov_; // [layer][position]
    std::vector<int> exit_layer_;                      // per position, -1 unknown
    std::vector<std::vector<float>> h_exit_;           // per position, block output at exit
};

} // namespace exitlab
