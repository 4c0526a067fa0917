#include "exitlab/kv_cache.hpp"

#include <cstring>

#include "exitlab/errors.hpp"
#include "exitlab/kernels.hpp"

#include "json.hpp"

namespace exitlab {

std::string to_string(KvPolicy p) {
    switch (p) {
        case KvPolicy::FullCompute: return "full-compute";
        case KvPolicy::CopyLower: return "copy-lower";
        case KvPolicy::Recompute: return "recompute";
    }
    return "?";
}

KvPolicy kv_policy_from_string(const std::string& s) {
    if (s == "full-compute") return KvPolicy::FullCompute;
    if (s == "copy-lower") return KvPolicy::CopyLower;
    if (s == "recompute") return KvPolicy::Recompute;
    throw ConfigError("unknown kv policy: " + s);
}

std::string Provenance::tag() const {
    switch (kind) {
        case Kind::Computed: return "computed(" + std::to_string(source_layer + 1) + ")";
        case Kind::CopiedFrom: return "copied-from(" + std::to_string(source_layer + 1) + ")";
        case Kind::RecomputedFrom: return "recomputed-from(" + std::to_string(source_layer + 1) + ")";
    }
    return "?";
}

KvCache::KvCache(const ModelConfig& cfg, KvPolicy policy)
    : cfg_(cfg), policy_(policy), dim_(cfg.n_heads * cfg.d_head) {
    k_store_.resize(static_cast<size_t>(cfg.n_layers));
    v_store_.resize(static_cast<size_t>(cfg.n_layers));
    prov_.resize(static_cast<size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
        k_store_[static_cast<size_t>(l)].assign(static_cast<size_t>(cfg.max_seq_len) * dim_, 0.0f);
        v_store_[static_cast<size_t>(l)].assign(static_cast<size_t>(cfg.max_seq_len) * dim_, 0.0f);
        prov_[static_cast<size_t>(l)].resize(static_cast<size_t>(cfg.max_seq_len));
    }
    exit_layer_.assign(static_cast<size_t>(cfg.max_seq_len), -1);
    h_exit_.resize(static_cast<size_t>(cfg.max_seq_len));
}

void KvCache::check_range(int position, int layer) const {
    if (position < 0 || position >= cfg_.max_seq_len) throw CacheProtocolError("position out of range");
    if (layer < 0 || layer >= cfg_.n_layers) throw CacheProtocolError("layer out of range");
}

float* KvCache::slot_k(int position, int layer) {
    return k_store_[static_cast<size_t>(layer)].data() + static_cast<size_t>(position) * dim_;
}

float* KvCache::slot_v(int position, int layer) {
    return v_store_[static_cast<size_t>(layer)].data() + static_cast<size_t>(position) * dim_;
}

void KvCache::append_computed(int position, int layer, const std::vector<float>& k, const std::vector<float>& v) {
    check_range(position, layer);
    if (static_cast<int>(k.size()) != dim_ || static_cast<int>(v.size()) != dim_)
        throw CacheProtocolError("k/v dimension mismatch");
    auto& slot = prov_[static_cast<size_t>(layer)][static_cast<size_t>(position)];
    // Approximate entries are never repaired by exact ones later.
    if (slot && slot->kind != Provenance::Kind::Computed)
        throw CacheProtocolError("attempt to overwrite approximate entry with computed one");
    std::memcpy(slot_k(position, layer), k.data(), static_cast<size_t>(dim_) * sizeof(float));
    std::memcpy(slot_v(position, layer), v.data(), static_cast<size_t>(dim_) * sizeof(float));
    slot = Provenance{Provenance::Kind::Computed, layer};
    if (layer == 0 && position >= filled_) filled_ = position + 1;
}

void KvCache::record_exit(int position, int exit_layer, const std::vector<float>& h_exit) {
    if (position < 0 || position >= cfg_.max_seq_len) throw CacheProtocolError("position out of range");
    exit_layer_[static_cast<size_t>(position)] = exit_layer;
    h_exit_[static_cast<size_t>(position)] = h_exit;
}

Provenance KvCache::materialize(const Weights& w, int position, int target_layer) {
    check_range(position, target_layer);
    auto& slot = prov_[static_cast<size_t>(target_layer)][static_cast<size_t>(position)];
    if (slot) return *slot;

    const int e = exit_layer_[static_cast<size_t>(position)];
    if (e < 0) throw CacheProtocolError("no exit recorded for position " + std::to_string(position));
    const int exit_idx = e - 1; // exit layers are 1-based
    if (target_layer <= exit_idx) throw CacheProtocolError("missing entry at or below the exit layer");

    if (policy_ == KvPolicy::FullCompute)
        throw CacheProtocolError("gap in cache under full-compute policy");

    if (policy_ == KvPolicy::CopyLower) {
        std::memcpy(slot_k(position, target_layer), entry_k(position, exit_idx),
                    static_cast<size_t>(dim_) * sizeof(float));
        std::memcpy(slot_v(position, target_layer), entry_v(position, exit_idx),
                    static_cast<size_t>(dim_) * sizeof(float));
        slot = Provenance{Provenance::Kind::CopiedFrom, exit_idx};
        return *slot;
    }

    // Recompute: run only the target layer's K/V projections on the stale
    // block output from the exit layer; the hidden state is not advanced
    // through the higher blocks.
    const auto& h = h_exit_[static_cast<size_t>(position)];
    if (static_cast<int>(h.size()) != cfg_.d_model)
        throw CacheProtocolError("missing stored hidden state for recompute");
    const auto& lw = w.layers[static_cast<size_t>(target_layer)];
    std::vector<float> n(static_cast<size_t>(cfg_.d_model));
    kernels::rmsnorm(h.data(), lw.attn_gain.data(), cfg_.d_model, cfg_.norm_epsilon, n.data());
    kernels::matvec(lw.wk.data(), cfg_.d_model, cfg_.d_model, n.data(), slot_k(position, target_layer));
    kernels::matvec(lw.wv.data(), cfg_.d_model, cfg_.d_model, n.data(), slot_v(position, target_layer));
    kernels::rope_inplace(slot_k(position, target_layer), cfg_.n_heads, cfg_.d_head, position);
    slot = Provenance{Provenance::Kind::RecomputedFrom, exit_idx};
    return *slot;
}

KvView KvCache::view(const Weights& w, int layer, int upto_position) {
    if (upto_position > 0) check_range(upto_position - 1, layer);
    for (int p = 0; p < upto_position; ++p) {
        if (!prov_[static_cast<size_t>(layer)][static_cast<size_t>(p)]) materialize(w, p, layer);
    }
    KvView vw;
    vw.k = k_store_[static_cast<size_t>(layer)].data();
    vw.v = v_store_[static_cast<size_t>(layer)].data();
    vw.count = upto_position;
    vw.dim = dim_;
    return vw;
}

bool KvCache::has_entry(int position, int layer) const {
    check_range(position, layer);
    return prov_[static_cast<size_t>(layer)][static_cast<size_t>(position)].has_value();
}

const Provenance& KvCache::provenance(int position, int layer) const {
    check_range(position, layer);
    const auto& slot = prov_[static_cast<size_t>(layer)][static_cast<size_t>(position)];
    if (!slot) throw CacheProtocolError("no entry at requested slot");
    return *slot;
}

int KvCache::exit_layer(int position) const {
    if (position < 0 || position >= cfg_.max_seq_len) throw CacheProtocolError("position out of range");
    return exit_layer_[static_cast<size_t>(position)];
}

const float* KvCache::entry_k(int position, int layer) const {
    check_range(position, layer);
    return k_store_[static_cast<size_t>(layer)].data() + static_cast<size_t>(position) * dim_;
}

const float* KvCache::entry_v(int position, int layer) const {
    check_range(position, layer);
    return v_store_[static_cast<size_t>(layer)].data() + static_cast<size_t>(position) * dim_;
}

std::string KvCache::provenance_grid_json() const {
    nlohmann::json grid = nlohmann::json::array();
    for (int p = 0; p < filled_; ++p) {
        nlohmann::json row = nlohmann::json::array();
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const auto& slot = prov_[static_cast<size_t>(l)][static_cast<size_t>(p)];
            row.push_back(slot ? slot->tag() : "-");
        }
        grid.push_back(row);
    }
    nlohmann::json out;
    out["policy"] = to_string(policy_);
    out["grid"] = grid;
    return out.dump();
}

int KvCache::count_kind(int layer, Provenance::Kind kind) const {
    int n = 0;
    for (const auto& slot : prov_[static_cast<size_t>(layer)])
        if (slot && slot->kind == kind) ++n;
    return n;
}

} // namespace exitlab
