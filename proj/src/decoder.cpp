#include "exitlab/decoder.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "exitlab/errors.hpp"

namespace exitlab {

namespace {

using Clock = std::chrono::steady_clock;

constexpr int kBosToken = 256;

bool is_whitespace_byte(int tok) {
    return tok == ' ' || tok == '\t' || tok == '\n' || tok == '\r';
}

// Byte-level word-boundary rule: a token starts a word iff it follows
// whitespace, a BOS marker, or nothing at all.
bool is_prefix_after(int prev_token) {
    return prev_token < 0 || prev_token == kBosToken || is_whitespace_byte(prev_token);
}

int sample_from(const std::vector<float>& dist, const Sampler& s, SeqRng& rng) {
    if (s.kind == Sampler::Kind::Greedy) return argmax_token(dist);
    return sample_top_k(dist, s.k, s.temperature, rng);
}

} // namespace

void DecodeSettings::validate(const ModelConfig& cfg) const {
    gate.validate();
    if (gate.family == GateFamily::Ideal && kv_policy != KvPolicy::FullCompute)
        throw ConfigError("ideal gate needs full forward passes; use the full-compute kv policy");
    if (max_new_tokens < 0) throw ConfigError("max_new_tokens must be >= 0");
    if (warmup_tokens < 0) throw ConfigError("warmup_tokens must be >= 0");
    if (sampler.kind == Sampler::Kind::TopK) {
        if (sampler.k < 1 || sampler.k > cfg.vocab_size) throw ConfigError("sampler k out of range");
        if (!(sampler.temperature > 0.0f)) throw ConfigError("temperature must be > 0");
    }
}

int sample_top_k(const std::vector<float>& dist, int k, float temperature, SeqRng& rng) {
    const int n = static_cast<int>(dist.size());
    k = std::min(k, n);
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        if (dist[static_cast<size_t>(a)] != dist[static_cast<size_t>(b)])
            return dist[static_cast<size_t>(a)] > dist[static_cast<size_t>(b)];
        return a < b;
    });
    // temperature scaling of logits == p^(1/T) up to normalization
    std::vector<double> wts(static_cast<size_t>(k));
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
        const double p = std::max(static_cast<double>(dist[static_cast<size_t>(idx[static_cast<size_t>(i)])]), 1e-30);
        wts[static_cast<size_t>(i)] = std::pow(p, 1.0 / static_cast<double>(temperature));
        sum += wts[static_cast<size_t>(i)];
    }
    const double u = rng.next_uniform() * sum;
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
        acc += wts[static_cast<size_t>(i)];
        if (u < acc) return idx[static_cast<size_t>(i)];
    }
    return idx[static_cast<size_t>(k - 1)];
}

DecodeResult decode_full(const ModelConfig& cfg, const Weights& w, const std::vector<int>& prompt,
                         const DecodeSettings& settings) {
    settings.validate(cfg);
    if (settings.kv_policy != KvPolicy::FullCompute)
        throw ConfigError("decode_full requires the full-compute kv policy");
    if (prompt.empty()) throw ConfigError("prompt must not be empty");
    if (static_cast<int>(prompt.size()) > cfg.max_seq_len) throw ConfigError("prompt exceeds max_seq_len");

    KvCache cache(cfg, KvPolicy::FullCompute);
    SeqRng rng(settings.sampler.seed);
    DecodeResult res;
    const auto t_start = Clock::now();

    for (size_t i = 0; i + 1 < prompt.size(); ++i) {
        auto st = forward_all_layers(cfg, w, prompt[i], static_cast<int>(i), cache);
        cache.record_exit(static_cast<int>(i), cfg.n_layers, st.h_out.back());
    }

    int cur = prompt.back();
    int pos = static_cast<int>(prompt.size()) - 1;
    for (int i = 0; i < settings.max_new_tokens && pos < cfg.max_seq_len; ++i) {
        const auto t0 = Clock::now();
        auto st = forward_all_layers(cfg, w, cur, pos, cache, /*with_logits=*/true);
        cache.record_exit(pos, cfg.n_layers, st.h_out.back());

        ExitTrace tr;
        tr.position = i;
        tr.exit_layer = cfg.n_layers;
        tr.is_word_prefix = is_prefix_after(cur);
        for (int l = 0; l < cfg.n_layers; ++l) {
            tr.layer_argmax.push_back(argmax_token(st.dists[static_cast<size_t>(l)]));
            tr.layer_confidence.push_back(static_cast<float>(max_prob(st.dists[static_cast<size_t>(l)])));
        }
        tr.optimal_exit_layer = ideal_exit_layer(tr.layer_argmax);

        const int next = sample_from(st.dists.back(), settings.sampler, rng);
        tr.token = next;
        tr.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
        res.tokens.push_back(next);
        res.traces.push_back(std::move(tr));

        if (next == settings.stop_token) break;
        cur = next;
        ++pos;
    }
    res.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t_start).count();
    return res;
}

DecodeResult decode_early_exit(const ModelConfig& cfg, const Weights& w, const std::vector<int>& prompt,
                               const DecodeSettings& settings) {
    settings.validate(cfg);
    if (settings.gate.family == GateFamily::Ideal && settings.kv_policy != KvPolicy::FullCompute)
        throw ConfigError("ideal gate needs full forward passes; use the full-compute kv policy");
    if (prompt.empty()) throw ConfigError("prompt must not be empty");
    if (static_cast<int>(prompt.size()) > cfg.max_seq_len) throw ConfigError("prompt exceeds max_seq_len");

    const int n_layers = cfg.n_layers;
    const bool full_compute = settings.kv_policy == KvPolicy::FullCompute;
    KvCache cache(cfg, settings.kv_policy);
    SeqRng rng(settings.sampler.seed);
    DecodeResult res;
    const auto t_start = Clock::now();

    // Prompt prefill always runs the full model.
    for (size_t i = 0; i + 1 < prompt.size(); ++i) {
        auto st = forward_all_layers(cfg, w, prompt[i], static_cast<int>(i), cache);
        cache.record_exit(static_cast<int>(i), n_layers, st.h_out.back());
    }

    int cur = prompt.back();
    int pos = static_cast<int>(prompt.size()) - 1;
    for (int i = 0; i < settings.max_new_tokens && pos < cfg.max_seq_len; ++i) {
        const auto t0 = Clock::now();
        const bool warm = i < settings.warmup_tokens;

        ExitTrace tr;
        tr.position = i;
        tr.is_word_prefix = is_prefix_after(cur);

        std::vector<float> h(w.token_embedding.begin() + static_cast<size_t>(cur) * cfg.d_model,
                             w.token_embedding.begin() + static_cast<size_t>(cur + 1) * cfg.d_model);
        GateState gate_state;
        const bool is_ideal = settings.gate.family == GateFamily::Ideal;
        std::vector<std::vector<float>> ideal_dists; // kept only for the ideal gate
        std::vector<float> exit_dist;
        int exit_layer = n_layers;
        bool decided = false;

        for (int l = 0; l < n_layers; ++l) {
            KvView past = cache.view(w, l, pos);
            BlockResult br = forward_block(cfg, w, h, l, pos, past);
            cache.append_computed(pos, l, br.k, br.v);
            h = std::move(br.h_out);

            const bool need_dist = !decided || settings.record_layer_stats;
            std::vector<float> dist;
            if (need_dist) {
                dist = softmax(project_logits(cfg, w, h));
                const int am = argmax_token(dist);
                gate_state.argmax_history.push_back(am);
                if (settings.record_layer_stats) {
                    tr.layer_argmax.push_back(am);
                    tr.layer_confidence.push_back(static_cast<float>(max_prob(dist)));
                }
            }
            if (is_ideal) {
                ideal_dists.push_back(std::move(dist));
                continue; // decided only once the final layer is known
            }

            if (!decided) {
                bool exit_here = (l == n_layers - 1);
                if (!exit_here && !warm) {
                    switch (settings.gate.family) {
                        case GateFamily::Confidence: exit_here = confidence_gate(dist, settings.gate.tau); break;
                        case GateFamily::Entropy: exit_here = entropy_gate(dist, settings.gate.tau); break;
                        case GateFamily::Patience: exit_here = patience_gate(gate_state, settings.gate.patience); break;
                        case GateFamily::Ideal: break;
                    }
                }
                if (exit_here) {
                    decided = true;
                    exit_layer = l + 1;
                    exit_dist = std::move(dist);
                    gate_state.last_decision = exit_layer;
                    if (!full_compute) break; // higher layers are left to the kv policy
                }
            }
        }

        if (is_ideal) {
            exit_layer = warm ? n_layers : ideal_exit_layer(gate_state.argmax_history);
            exit_dist = std::move(ideal_dists[static_cast<size_t>(exit_layer - 1)]);
        }

        if (full_compute) {
            cache.record_exit(pos, n_layers, h);
            if (settings.record_layer_stats && static_cast<int>(tr.layer_argmax.size()) == n_layers)
                tr.optimal_exit_layer = ideal_exit_layer(tr.layer_argmax);
        } else {
            cache.record_exit(pos, exit_layer, h);
        }

        tr.exit_layer = exit_layer;
        const int next = sample_from(exit_dist, settings.sampler, rng);
        tr.token = next;
        tr.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
        res.tokens.push_back(next);
        res.traces.push_back(std::move(tr));

        if (next == settings.stop_token) break;
        cur = next;
        ++pos;
    }
    res.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t_start).count();
    return res;
}

std::vector<ExitTrace> trace_forced(const ModelConfig& cfg, const Weights& w,
                                    const std::vector<int>& tokens) {
    if (tokens.size() < 2) throw ConfigError("trace_forced needs at least two tokens");
    if (static_cast<int>(tokens.size()) > cfg.max_seq_len) throw ConfigError("sequence exceeds max_seq_len");

    KvCache cache(cfg, KvPolicy::FullCompute);
    std::vector<ExitTrace> out;
    for (size_t i = 0; i + 1 < tokens.size(); ++i) {
        const auto t0 = Clock::now();
        auto st = forward_all_layers(cfg, w, tokens[i], static_cast<int>(i), cache, /*with_logits=*/true);
        cache.record_exit(static_cast<int>(i), cfg.n_layers, st.h_out.back());

        ExitTrace tr;
        tr.position = static_cast<int>(i);
        tr.token = tokens[i + 1];
        tr.exit_layer = cfg.n_layers;
        tr.is_word_prefix = is_prefix_after(tokens[i]);
        for (int l = 0; l < cfg.n_layers; ++l) {
            tr.layer_argmax.push_back(argmax_token(st.dists[static_cast<size_t>(l)]));
            tr.layer_confidence.push_back(static_cast<float>(max_prob(st.dists[static_cast<size_t>(l)])));
        }
        tr.optimal_exit_layer = ideal_exit_layer(tr.layer_argmax);
        tr.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
        out.push_back(std::move(tr));
    }
    return out;
}

double theoretical_speedup(const std::vector<ExitTrace>& traces, int n_layers) {
    if (traces.empty()) throw ConfigError("speed-up over empty traces");
    int64_t sum = 0;
    for (const auto& t : traces) sum += t.exit_layer;
    return static_cast<double>(traces.size()) * n_layers / static_cast<double>(sum);
}

Speedup measure_speedup(const std::vector<ExitTrace>& traces, int n_layers, int64_t baseline_ns,
                        int64_t run_ns) {
    Speedup s;
    s.theoretical = theoretical_speedup(traces, n_layers);
    s.wall_clock = run_ns > 0 ? static_cast<double>(baseline_ns) / static_cast<double>(run_ns) : 0.0;
    return s;
}

double exact_match_rate(const std::vector<int>& reference, const std::vector<int>& candidate) {
    const size_t lo = std::min(reference.size(), candidate.size());
    const size_t hi = std::max(reference.size(), candidate.size());
    if (hi == 0) return 1.0;
    size_t match = 0;
    for (size_t i = 0; i < lo; ++i)
        if (reference[i] == candidate[i]) ++match;
    return static_cast<double>(match) / static_cast<double>(hi);
}

std::vector<double> default_grid(GateFamily family, int n_layers) {
    std::vector<double> g;
    switch (family) {
        case GateFamily::Confidence:
            for (double t = 0.5; t < 0.951; t += 0.05) g.push_back(t);
            g.push_back(0.99);
            break;
        case GateFamily::Entropy:
            for (double t = 0.1; t < 2.001; t += 0.1) g.push_back(t);
            break;
        case GateFamily::Patience:
            for (int t = 1; t < n_layers; ++t) g.push_back(static_cast<double>(t));
            break;
        case GateFamily::Ideal:
            g.push_back(0.0);
            break;
    }
    return g;
}

ThresholdSearchResult threshold_search(const ModelConfig& cfg, const Weights& w,
                                       const std::vector<std::vector<int>>& eval_prompts,
                                       GateFamily family, const std::vector<double>& grid,
                                       double quality_floor, const DecodeSettings& base) {
    if (eval_prompts.empty()) throw ConfigError("threshold search needs a non-empty eval set");
    if (grid.empty()) throw ConfigError("threshold search needs a non-empty grid");

    // Full-model greedy references.
    std::vector<std::vector<int>> refs(eval_prompts.size());
    DecodeSettings full = base;
    full.kv_policy = KvPolicy::FullCompute;
    full.sampler.kind = Sampler::Kind::Greedy;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < static_cast<int>(eval_prompts.size()); ++i)
        refs[static_cast<size_t>(i)] = decode_full(cfg, w, eval_prompts[static_cast<size_t>(i)], full).tokens;

    struct Point {
        double tau, metric, speedup;
    };
    std::vector<Point> points(grid.size());
    for (size_t gi = 0; gi < grid.size(); ++gi) {
        DecodeSettings ds = base;
        ds.sampler.kind = Sampler::Kind::Greedy;
        ds.gate.family = family;
        if (family == GateFamily::Patience)
            ds.gate.patience = static_cast<int>(grid[gi] + 0.5);
        else
            ds.gate.tau = grid[gi];

        std::vector<double> rates(eval_prompts.size());
        std::vector<int64_t> layer_sums(eval_prompts.size());
        std::vector<int64_t> counts(eval_prompts.size());
#pragma omp parallel for schedule(dynamic)
        for (int i = 0; i < static_cast<int>(eval_prompts.size()); ++i) {
            auto r = decode_early_exit(cfg, w, eval_prompts[static_cast<size_t>(i)], ds);
            rates[static_cast<size_t>(i)] = exact_match_rate(refs[static_cast<size_t>(i)], r.tokens);
            int64_t sum = 0;
            for (const auto& t : r.traces) sum += t.exit_layer;
            layer_sums[static_cast<size_t>(i)] = sum;
            counts[static_cast<size_t>(i)] = static_cast<int64_t>(r.traces.size());
        }
        double metric = 0.0;
        int64_t sum = 0, cnt = 0;
        for (size_t i = 0; i < eval_prompts.size(); ++i) {
            metric += rates[i];
            sum += layer_sums[i];
            cnt += counts[i];
        }
        metric /= static_cast<double>(eval_prompts.size());
        const double speedup = cnt > 0 ? static_cast<double>(cnt) * cfg.n_layers / static_cast<double>(sum) : 1.0;
        points[gi] = {grid[gi], metric, speedup};
    }

    // The reference metric is 1.0 by construction (reference vs itself).
    const double floor = quality_floor;
    ThresholdSearchResult best;
    bool any = false;
    for (const auto& p : points) {
        if (p.metric >= floor && (!any || p.speedup > best.speedup)) {
            best = {p.tau, p.metric, p.speedup, true};
            any = true;
        }
    }
    if (!any) {
        for (const auto& p : points) {
            if (!best.floor_met && p.metric >= best.metric) best = {p.tau, p.metric, p.speedup, false};
        }
        best.floor_met = false;
    }
    return best;
}

} // namespace exitlab
