#include "exitlab/model.hpp"

#include <cmath>
#include <cstring>

#include "exitlab/errors.hpp"
#include "exitlab/kernels.hpp"
#include "exitlab/kv_cache.hpp"
#include "exitlab/rng.hpp"

namespace exitlab {

void validate_config(const ModelConfig& cfg) {
    if (cfg.n_layers < 1) throw ConfigError("n_layers must be >= 1");
    if (cfg.vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (cfg.d_model != cfg.n_heads * cfg.d_head) throw ConfigError("d_model must equal n_heads * d_head");
    if (cfg.d_head % 2 != 0) throw ConfigError("d_head must be even (rotary pairs)");
    if (cfg.d_ffn < 1 || cfg.n_heads < 1) throw ConfigError("d_ffn and n_heads must be >= 1");
    if (cfg.max_seq_len < 1) throw ConfigError("max_seq_len must be >= 1");
    if (!(cfg.norm_epsilon > 0.0f)) throw ConfigError("norm_epsilon must be > 0");
}

std::vector<TensorRef> tensor_list(Weights& w) {
    std::vector<TensorRef> out;
    const int vocab = static_cast<int>(w.token_embedding.size() / w.final_gain.size());
    const int d = static_cast<int>(w.final_gain.size());
    out.push_back({"token_embedding", {vocab, d}, &w.token_embedding});
    for (size_t l = 0; l < w.layers.size(); ++l) {
        auto& lw = w.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        const int dffn = static_cast<int>(lw.w1.size()) / d;
        out.push_back({p + "wq", {d, d}, &lw.wq});
        out.push_back({p + "wk", {d, d}, &lw.wk});
        out.push_back({p + "wv", {d, d}, &lw.wv});
        out.push_back({p + "wo", {d, d}, &lw.wo});
        out.push_back({p + "w1", {dffn, d}, &lw.w1});
        out.push_back({p + "w2", {d, dffn}, &lw.w2});
        out.push_back({p + "attn_gain", {d}, &lw.attn_gain});
        out.push_back({p + "ffn_gain", {d}, &lw.ffn_gain});
    }
    out.push_back({"final_gain", {d}, &w.final_gain});
    out.push_back({"output_head", {vocab, d}, &w.output_head});
    return out;
}

Weights zeros_like(const ModelConfig& cfg) {
    Weights w;
    const size_t d = static_cast<size_t>(cfg.d_model);
    w.token_embedding.assign(static_cast<size_t>(cfg.vocab_size) * d, 0.0f);
    w.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (auto& lw : w.layers) {
        lw.wq.assign(d * d, 0.0f);
        lw.wk.assign(d * d, 0.0f);
        lw.wv.assign(d * d, 0.0f);
        lw.wo.assign(d * d, 0.0f);
        lw.w1.assign(static_cast<size_t>(cfg.d_ffn) * d, 0.0f);
        lw.w2.assign(d * static_cast<size_t>(cfg.d_ffn), 0.0f);
        lw.attn_gain.assign(d, 0.0f);
        lw.ffn_gain.assign(d, 0.0f);
    }
    w.final_gain.assign(d, 0.0f);
    w.output_head.assign(static_cast<size_t>(cfg.vocab_size) * d, 0.0f);
    return w;
}

Weights init_model(const ModelConfig& cfg) {
    validate_config(cfg);
    Weights w = zeros_like(cfg);
    const float std_dev = 0.02f / std::sqrt(static_cast<float>(cfg.n_layers));
    auto tensors = tensor_list(w);
    for (size_t ti = 0; ti < tensors.size(); ++ti) {
        auto& t = tensors[ti];
        const bool is_gain = t.shape.size() == 1;
        const uint64_t stream = fnv1a64(t.name.data(), t.name.size());
        for (size_t i = 0; i < t.data->size(); ++i) {
            (*t.data)[i] = is_gain ? 1.0f : std_dev * counter_normal(cfg.seed, stream, i);
        }
    }
    return w;
}

uint64_t weights_checksum(const Weights& w) {
    auto tensors = tensor_list(const_cast<Weights&>(w));
    uint64_t h = 0xcbf29ce484222325ull;
    for (auto& t : tensors) h = fnv1a64(t.data->data(), t.data->size() * sizeof(float), h);
    return h;
}

bool weights_finite(const Weights& w) {
    auto tensors = tensor_list(const_cast<Weights&>(w));
    for (auto& t : tensors)
        for (float v : *t.data)
            if (!std::isfinite(v)) return false;
    return true;
}

BlockResult forward_block(const ModelConfig& cfg, const Weights& w, const std::vector<float>& h_prev,
                          int layer, int position, const KvView& past) {
    if (layer < 0 || layer >= cfg.n_layers) throw ConfigError("layer index out of range");
    if (static_cast<int>(h_prev.size()) != cfg.d_model) throw ConfigError("hidden state dimension mismatch");
    const auto& lw = w.layers[static_cast<size_t>(layer)];
    const int d = cfg.d_model;

    BlockResult r;
    r.k.resize(static_cast<size_t>(d));
    r.v.resize(static_cast<size_t>(d));
    r.attn_out.resize(static_cast<size_t>(d));

    std::vector<float> n1(static_cast<size_t>(d));
    kernels::rmsnorm(h_prev.data(), lw.attn_gain.data(), d, cfg.norm_epsilon, n1.data());

    std::vector<float> q(static_cast<size_t>(d));
    kernels::matvec(lw.wq.data(), d, d, n1.data(), q.data());
    kernels::matvec(lw.wk.data(), d, d, n1.data(), r.k.data());
    kernels::matvec(lw.wv.data(), d, d, n1.data(), r.v.data());
    kernels::rope_inplace(q.data(), cfg.n_heads, cfg.d_head, position);
    kernels::rope_inplace(r.k.data(), cfg.n_heads, cfg.d_head, position);

    if (position > 0 && past.count < position)
        throw CacheProtocolError("kv view covers " + std::to_string(past.count) + " positions, need " +
                                 std::to_string(position));

    std::vector<float> ctx(static_cast<size_t>(d));
    kernels::attention(q.data(), past.k, past.v, position, r.k.data(), r.v.data(), cfg.n_heads, cfg.d_head,
                       ctx.data());
    kernels::matvec(lw.wo.data(), d, d, ctx.data(), r.attn_out.data());

    r.h_attn.resize(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) r.h_attn[static_cast<size_t>(i)] = r.attn_out[static_cast<size_t>(i)] + h_prev[static_cast<size_t>(i)];

    std::vector<float> n2(static_cast<size_t>(d));
    kernels::rmsnorm(r.h_attn.data(), lw.ffn_gain.data(), d, cfg.norm_epsilon, n2.data());
    std::vector<float> u(static_cast<size_t>(cfg.d_ffn));
    kernels::matvec(lw.w1.data(), cfg.d_ffn, d, n2.data(), u.data());
    kernels::silu_inplace(u.data(), cfg.d_ffn);
    r.ffn_out.resize(static_cast<size_t>(d));
    kernels::matvec(lw.w2.data(), d, cfg.d_ffn, u.data(), r.ffn_out.data());

    r.h_out.resize(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) r.h_out[static_cast<size_t>(i)] = r.ffn_out[static_cast<size_t>(i)] + r.h_attn[static_cast<size_t>(i)];
    return r;
}

PerLayerStates forward_all_layers(const ModelConfig& cfg, const Weights& w, int token, int position,
                                  KvCache& cache, bool with_logits) {
    if (position >= cfg.max_seq_len) throw ConfigError("position exceeds max_seq_len");
    if (token < 0 || token >= cfg.vocab_size) throw ConfigError("token id out of vocab");

    PerLayerStates st;
    st.h_in.assign(w.token_embedding.begin() + static_cast<size_t>(token) * cfg.d_model,
                   w.token_embedding.begin() + static_cast<size_t>(token + 1) * cfg.d_model);

    std::vector<float> h = st.h_in;
    for (int l = 0; l < cfg.n_layers; ++l) {
        KvView past = cache.view(w, l, position);
        BlockResult r = forward_block(cfg, w, h, l, position, past);
        cache.append_computed(position, l, r.k, r.v);
        st.h_attn.push_back(r.h_attn);
        st.attn_out.push_back(std::move(r.attn_out));
        st.ffn_out.push_back(std::move(r.ffn_out));
        if (with_logits) {
            st.logits.push_back(project_logits(cfg, w, r.h_out));
            st.dists.push_back(softmax(st.logits.back()));
        }
        st.h_out.push_back(r.h_out);
        h = std::move(r.h_out);
    }
    return st;
}

std::vector<float> project_logits(const ModelConfig& cfg, const Weights& w, const std::vector<float>& h) {
    if (static_cast<int>(h.size()) != cfg.d_model) throw ConfigError("project_logits: dimension mismatch");
    std::vector<float> n(static_cast<size_t>(cfg.d_model));
    kernels::rmsnorm(h.data(), w.final_gain.data(), cfg.d_model, cfg.norm_epsilon, n.data());
    std::vector<float> logits(static_cast<size_t>(cfg.vocab_size));
    kernels::matvec(w.output_head.data(), cfg.vocab_size, cfg.d_model, n.data(), logits.data());
    return logits;
}

std::vector<float> project_logits_identity(const ModelConfig& cfg, const Weights& w, const std::vector<float>& h) {
    if (static_cast<int>(h.size()) != cfg.d_model) throw ConfigError("project_logits: dimension mismatch");
    std::vector<float> logits(static_cast<size_t>(cfg.vocab_size));
    kernels::matvec(w.output_head.data(), cfg.vocab_size, cfg.d_model, h.data(), logits.data());
    return logits;
}

std::vector<float> softmax(std::vector<float> logits) {
    kernels::softmax_inplace(logits.data(), static_cast<int>(logits.size()));
    return logits;
}

} // namespace exitlab
