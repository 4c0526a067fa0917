#include "exitlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "exitlab/errors.hpp"

namespace exitlab {

ExitStats optimal_exit_stats(const std::vector<ExitTrace>& traces, int n_layers) {
    if (traces.empty()) throw ConfigError("optimal_exit_stats: empty traces");
    ExitStats s;
    s.max_layer = n_layers;
    s.token_count = static_cast<int>(traces.size());
    double sum = 0.0;
    int early = 0;
    for (const auto& t : traces) {
        if (!t.optimal_exit_layer) throw ConfigError("trace lacks optimal exit layer (need a full-compute run)");
        sum += *t.optimal_exit_layer;
        if (*t.optimal_exit_layer < n_layers) ++early;
    }
    s.avg_optimal_exit = sum / static_cast<double>(traces.size());
    s.perc_early = static_cast<double>(early) / static_cast<double>(traces.size());
    return s;
}

std::vector<std::pair<int, double>> exit_vs_position(const std::vector<ExitTrace>& traces, int bucket_size) {
    if (bucket_size <= 0) throw ConfigError("bucket_size must be > 0");
    std::map<int, std::pair<double, int>> buckets; // start -> (sum, count)
    for (const auto& t : traces) {
        if (!t.optimal_exit_layer) throw ConfigError("trace lacks optimal exit layer");
        const int b = (t.position / bucket_size) * bucket_size;
        auto& acc = buckets[b];
        acc.first += *t.optimal_exit_layer;
        acc.second += 1;
    }
    std::vector<std::pair<int, double>> out;
    for (const auto& [b, acc] : buckets) out.emplace_back(b, acc.first / acc.second);
    return out;
}

std::vector<double> confidence_per_layer(const std::vector<ExitTrace>& traces, int n_layers) {
    if (traces.empty()) throw ConfigError("confidence_per_layer: empty traces");
    std::vector<double> sum(static_cast<size_t>(n_layers), 0.0);
    std::vector<int> cnt(static_cast<size_t>(n_layers), 0);
    for (const auto& t : traces) {
        for (size_t l = 0; l < t.layer_confidence.size() && l < sum.size(); ++l) {
            sum[l] += t.layer_confidence[l];
            cnt[l] += 1;
        }
    }
    std::vector<double> out(static_cast<size_t>(n_layers), 0.0);
    for (size_t l = 0; l < out.size(); ++l) out[l] = cnt[l] > 0 ? sum[l] / cnt[l] : 0.0;
    return out;
}

std::optional<int> confidence_crossing_layer(const std::vector<double>& curve, double level) {
    for (size_t l = 0; l < curve.size(); ++l)
        if (curve[l] > level) return static_cast<int>(l) + 1;
    return std::nullopt;
}

GateDistance gate_distance(const std::vector<ExitTrace>& full_traces,
                           const std::vector<ExitTrace>& gate_traces) {
    size_t aligned = 0;
    const size_t lo = std::min(full_traces.size(), gate_traces.size());
    while (aligned < lo && full_traces[aligned].token == gate_traces[aligned].token) ++aligned;
    if (aligned == 0) throw ConfigError("gate_distance: zero aligned tokens");

    GateDistance d;
    d.aligned_tokens = static_cast<int>(aligned);
    const size_t total = std::max(full_traces.size(), gate_traces.size());
    d.excluded_fraction = 1.0 - static_cast<double>(aligned) / static_cast<double>(total);
    for (size_t i = 0; i < aligned; ++i) {
        if (!full_traces[i].optimal_exit_layer) throw ConfigError("full trace lacks optimal exit layer");
        const double diff = gate_traces[i].exit_layer - *full_traces[i].optimal_exit_layer;
        d.mean_abs += std::abs(diff);
        d.mean_signed += diff;
    }
    d.mean_abs /= static_cast<double>(aligned);
    d.mean_signed /= static_cast<double>(aligned);
    return d;
}

namespace {

double kl_to_mid(const std::vector<float>& p, const std::vector<float>& q) {
    double kl = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double pi = p[i];
        if (pi > 0.0) {
            const double mi = 0.5 * (static_cast<double>(p[i]) + static_cast<double>(q[i]));
            kl += pi * std::log(pi / mi);
        }
    }
    return kl;
}

} // namespace

double js_divergence(const std::vector<float>& p, const std::vector<float>& q) {
    if (p.size() != q.size()) throw ConfigError("js_divergence: length mismatch");
    return 0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p);
}

double cosine_similarity(const std::vector<float>& u, const std::vector<float>& v) {
    if (u.size() != v.size()) throw ConfigError("cosine_similarity: length mismatch");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (size_t i = 0; i < u.size(); ++i) {
        dot += static_cast<double>(u[i]) * v[i];
        nu += static_cast<double>(u[i]) * u[i];
        nv += static_cast<double>(v[i]) * v[i];
    }
    if (nu == 0.0 || nv == 0.0) throw ConfigError("cosine_similarity: zero vector");
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

SimilarityMatrices similarity_matrices(const PerLayerStates& states) {
    const int n = static_cast<int>(states.h_out.size());
    if (static_cast<int>(states.dists.size()) != n) throw ConfigError("states lack per-layer distributions");

    SimilarityMatrices m;
    m.cosine.assign(static_cast<size_t>(n + 1), std::vector<double>(static_cast<size_t>(n + 1), 0.0));
    m.jsd.assign(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n), 0.0));

    auto state_at = [&](int i) -> const std::vector<float>& {
        return i == 0 ? states.h_in : states.h_out[static_cast<size_t>(i - 1)];
    };
    // each unordered pair computed once and mirrored
    for (int i = 0; i <= n; ++i) {
        m.cosine[static_cast<size_t>(i)][static_cast<size_t>(i)] = 1.0;
        for (int j = i + 1; j <= n; ++j) {
            const double c = cosine_similarity(state_at(i), state_at(j));
            m.cosine[static_cast<size_t>(i)][static_cast<size_t>(j)] = c;
            m.cosine[static_cast<size_t>(j)][static_cast<size_t>(i)] = c;
        }
    }
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double d = js_divergence(states.dists[static_cast<size_t>(i)], states.dists[static_cast<size_t>(j)]);
            m.jsd[static_cast<size_t>(i)][static_cast<size_t>(j)] = d;
            m.jsd[static_cast<size_t>(j)][static_cast<size_t>(i)] = d;
        }
    }
    return m;
}

SubwordStats subword_exit_stats(const std::vector<ExitTrace>& traces, bool use_optimal) {
    double psum = 0.0, ssum = 0.0;
    int pcnt = 0, scnt = 0;
    for (const auto& t : traces) {
        int exit;
        if (use_optimal) {
            if (!t.optimal_exit_layer) throw ConfigError("trace lacks optimal exit layer");
            exit = *t.optimal_exit_layer;
        } else {
            exit = t.exit_layer;
        }
        if (t.is_word_prefix) {
            psum += exit;
            ++pcnt;
        } else {
            ssum += exit;
            ++scnt;
        }
    }
    SubwordStats s;
    const double total = pcnt + scnt;
    if (pcnt > 0) s.prefix = {psum / pcnt, pcnt / total};
    if (scnt > 0) s.suffix = {ssum / scnt, scnt / total};
    return s;
}

namespace {

std::vector<TopEntry> topk_of(const std::vector<float>& values, int k) {
    std::vector<int> idx(values.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    const int kk = std::min<int>(k, static_cast<int>(values.size()));
    std::partial_sort(idx.begin(), idx.begin() + kk, idx.end(), [&](int a, int b) {
        if (values[static_cast<size_t>(a)] != values[static_cast<size_t>(b)])
            return values[static_cast<size_t>(a)] > values[static_cast<size_t>(b)];
        return a < b;
    });
    std::vector<TopEntry> out;
    for (int i = 0; i < kk; ++i) out.push_back({idx[static_cast<size_t>(i)], values[static_cast<size_t>(idx[static_cast<size_t>(i)])]});
    return out;
}

} // namespace

SublayerTrace sublayer_topk(const ModelConfig& cfg, const Weights& w, const PerLayerStates& states, int k,
                            bool identity_mode) {
    SublayerTrace out;
    out.identity_mode = identity_mode;
    auto project = [&](const std::vector<float>& h) {
        if (identity_mode) return project_logits_identity(cfg, w, h);
        return softmax(project_logits(cfg, w, h));
    };
    const int n = static_cast<int>(states.h_out.size());
    for (int l = 0; l < n; ++l) {
        SublayerTrace::LayerTaps taps;
        taps.block_out = topk_of(project(states.h_out[static_cast<size_t>(l)]), k);
        taps.skip = topk_of(project(states.h_attn[static_cast<size_t>(l)]), k);
        taps.ffn_module = topk_of(project(states.ffn_out[static_cast<size_t>(l)]), k);
        taps.attn_module = topk_of(project(states.attn_out[static_cast<size_t>(l)]), k);
        out.layers.push_back(std::move(taps));
    }
    return out;
}

double repetition_rate(const std::vector<int>& tokens, int n) {
    if (static_cast<int>(tokens.size()) < n + 1) return 0.0;
    std::set<std::vector<int>> seen;
    int total = 0, dup = 0;
    for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) {
        std::vector<int> gram(tokens.begin() + static_cast<long>(i), tokens.begin() + static_cast<long>(i) + n);
        ++total;
        if (!seen.insert(gram).second) ++dup;
    }
    return total > 0 ? static_cast<double>(dup) / total : 0.0;
}

} // namespace exitlab
