#include "exitlab/trainer.hpp"

#include <cmath>
#include <cstring>

#include "exitlab/errors.hpp"
#include "exitlab/kernels.hpp"
#include "exitlab/rng.hpp"

namespace exitlab {

std::string to_string(TrainRegime r) {
    return r == TrainRegime::Standard ? "standard" : "joint";
}

TrainRegime train_regime_from_string(const std::string& s) {
    if (s == "standard") return TrainRegime::Standard;
    if (s == "joint") return TrainRegime::Joint;
    throw ConfigError("unknown train regime: " + s);
}

void TrainSettings::validate(const ModelConfig& cfg) const {
    if (!(learning_rate >= 0.0f)) throw ConfigError("learning_rate must not be negative");
    if (steps < 0 || batch_size < 1 || seq_len < 1) throw ConfigError("bad training sizes");
    if (seq_len > cfg.max_seq_len) throw ConfigError("seq_len exceeds max_seq_len");
    if (regime == TrainRegime::Joint && !layer_loss_weights.empty()) {
        if (static_cast<int>(layer_loss_weights.size()) != cfg.n_layers)
            throw ConfigError("layer_loss_weights length must equal n_layers");
        float sum = 0.0f;
        for (float v : layer_loss_weights) {
            if (v < 0.0f) throw ConfigError("layer_loss_weights must be nonnegative");
            sum += v;
        }
        if (!(sum > 0.0f)) throw ConfigError("layer_loss_weights must not all be zero");
    }
}

double cross_entropy(const std::vector<float>& dist, int target) {
    if (target < 0 || target >= static_cast<int>(dist.size())) throw ConfigError("target out of vocab");
    const double p = std::max(static_cast<double>(dist[static_cast<size_t>(target)]), 1e-9);
    return -std::log(p);
}

double joint_loss(const std::vector<std::vector<float>>& per_layer_dists, int target,
                  const std::vector<float>& weights) {
    if (per_layer_dists.size() != weights.size()) throw ConfigError("joint_loss: length mismatch");
    double num = 0.0, den = 0.0;
    for (size_t l = 0; l < weights.size(); ++l) {
        den += weights[l];
        if (weights[l] != 0.0f) num += weights[l] * cross_entropy(per_layer_dists[l], target);
    }
    if (!(den > 0.0)) throw ConfigError("joint_loss: zero weight sum");
    return num / den;
}

namespace {

// (layer index 0-based, per-position loss scale)
std::vector<std::pair<int, double>> loss_layers(const ModelConfig& cfg, const TrainSettings& s,
                                                int total_positions) {
    std::vector<std::pair<int, double>> out;
    if (s.regime == TrainRegime::Standard) {
        out.emplace_back(cfg.n_layers - 1, 1.0 / total_positions);
        return out;
    }
    std::vector<float> wts = s.layer_loss_weights;
    if (wts.empty()) wts.assign(static_cast<size_t>(cfg.n_layers), 1.0f);
    double sum = 0.0;
    for (float v : wts) sum += v;
    for (int l = 0; l < cfg.n_layers; ++l) {
        if (wts[static_cast<size_t>(l)] != 0.0f)
            out.emplace_back(l, wts[static_cast<size_t>(l)] / (sum * total_positions));
    }
    return out;
}

struct SeqActs {
    // all flattened [pos * width + i]
    std::vector<std::vector<float>> h;     // (L+1) x S*d
    std::vector<std::vector<float>> n1, q, k, v, ctx, h_attn, n2; // L x S*d
    std::vector<std::vector<float>> probs;                        // L x H*S*S attention weights
    std::vector<std::vector<float>> u_pre, u_act;                 // L x S*dffn
    std::vector<std::vector<float>> inv_r1, inv_r2;               // L x S
};

// rmsnorm backward: x input, g gain, ir inverse rms, dy upstream.
// Adds into dx and dg.
void rmsnorm_backward(const float* x, const float* g, float ir, const float* dy, int n, float* dx,
                      float* dg) {
    float dot = 0.0f;
    for (int i = 0; i < n; ++i) dot += dy[i] * g[i] * x[i];
    const float c = ir * ir * ir * dot / static_cast<float>(n);
    for (int i = 0; i < n; ++i) {
        dx[i] += ir * g[i] * dy[i] - c * x[i];
        dg[i] += dy[i] * x[i] * ir;
    }
}

// Forward pass for one training sequence, caching everything backward needs.
void seq_forward(const ModelConfig& cfg, const Weights& w, const std::vector<int>& input, SeqActs& a) {
    const int S = static_cast<int>(input.size());
    const int d = cfg.d_model;
    const int dffn = cfg.d_ffn;
    const int H = cfg.n_heads;
    const int dh = cfg.d_head;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    a.h.assign(static_cast<size_t>(cfg.n_layers + 1), std::vector<float>(static_cast<size_t>(S) * d));
    a.n1.assign(static_cast<size_t>(cfg.n_layers), std::vector<float>(static_cast<size_t>(S) * d));
    a.q = a.n1; a.k = a.n1; a.v = a.n1; a.ctx = a.n1; a.h_attn = a.n1; a.n2 = a.n1;
    a.probs.assign(static_cast<size_t>(cfg.n_layers),
                   std::vector<float>(static_cast<size_t>(H) * S * S, 0.0f));
    a.u_pre.assign(static_cast<size_t>(cfg.n_layers), std::vector<float>(static_cast<size_t>(S) * dffn));
    a.u_act = a.u_pre;
    a.inv_r1.assign(static_cast<size_t>(cfg.n_layers), std::vector<float>(static_cast<size_t>(S)));
    a.inv_r2 = a.inv_r1;

    for (int t = 0; t < S; ++t)
        std::memcpy(a.h[0].data() + static_cast<size_t>(t) * d,
                    w.token_embedding.data() + static_cast<size_t>(input[static_cast<size_t>(t)]) * d,
                    static_cast<size_t>(d) * sizeof(float));

    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& lw = w.layers[static_cast<size_t>(l)];
        auto& hin = a.h[static_cast<size_t>(l)];
        auto& hout = a.h[static_cast<size_t>(l + 1)];
        const size_t li = static_cast<size_t>(l);

        for (int t = 0; t < S; ++t) {
            const size_t o = static_cast<size_t>(t) * d;
            a.inv_r1[li][static_cast<size_t>(t)] =
                kernels::rmsnorm(hin.data() + o, lw.attn_gain.data(), d, cfg.norm_epsilon, a.n1[li].data() + o);
            kernels::matvec(lw.wq.data(), d, d, a.n1[li].data() + o, a.q[li].data() + o);
            kernels::matvec(lw.wk.data(), d, d, a.n1[li].data() + o, a.k[li].data() + o);
            kernels::matvec(lw.wv.data(), d, d, a.n1[li].data() + o, a.v[li].data() + o);
            kernels::rope_inplace(a.q[li].data() + o, H, dh, t);
            kernels::rope_inplace(a.k[li].data() + o, H, dh, t);
        }

        // causal attention over the whole sequence
#pragma omp parallel for schedule(static) if (H * S >= 64)
        for (int h = 0; h < H; ++h) {
            const int off = h * dh;
            std::vector<float> scores(static_cast<size_t>(S));
            for (int t = 0; t < S; ++t) {
                const float* qt = a.q[li].data() + static_cast<size_t>(t) * d + off;
                for (int j = 0; j <= t; ++j) {
                    const float* kj = a.k[li].data() + static_cast<size_t>(j) * d + off;
                    float acc = 0.0f;
                    for (int i = 0; i < dh; ++i) acc += qt[i] * kj[i];
                    scores[static_cast<size_t>(j)] = acc * scale;
                }
                kernels::softmax_inplace(scores.data(), t + 1);
                float* pr = a.probs[li].data() + (static_cast<size_t>(h) * S + t) * S;
                std::memcpy(pr, scores.data(), static_cast<size_t>(t + 1) * sizeof(float));
                float* ct = a.ctx[li].data() + static_cast<size_t>(t) * d + off;
                for (int i = 0; i < dh; ++i) {
                    float acc = 0.0f;
                    for (int j = 0; j <= t; ++j)
                        acc += pr[j] * a.v[li][static_cast<size_t>(j) * d + off + static_cast<size_t>(i)];
                    ct[i] = acc;
                }
            }
        }

        for (int t = 0; t < S; ++t) {
            const size_t o = static_cast<size_t>(t) * d;
            std::vector<float> attn_out(static_cast<size_t>(d));
            kernels::matvec(lw.wo.data(), d, d, a.ctx[li].data() + o, attn_out.data());
            for (int i = 0; i < d; ++i)
                a.h_attn[li][o + static_cast<size_t>(i)] = attn_out[static_cast<size_t>(i)] + hin[o + static_cast<size_t>(i)];

            a.inv_r2[li][static_cast<size_t>(t)] = kernels::rmsnorm(
                a.h_attn[li].data() + o, lw.ffn_gain.data(), d, cfg.norm_epsilon, a.n2[li].data() + o);
            const size_t of = static_cast<size_t>(t) * dffn;
            kernels::matvec(lw.w1.data(), dffn, d, a.n2[li].data() + o, a.u_pre[li].data() + of);
            std::memcpy(a.u_act[li].data() + of, a.u_pre[li].data() + of,
                        static_cast<size_t>(dffn) * sizeof(float));
            kernels::silu_inplace(a.u_act[li].data() + of, dffn);
            kernels::matvec(lw.w2.data(), d, dffn, a.u_act[li].data() + of, hout.data() + o);
            for (int i = 0; i < d; ++i) hout[o + static_cast<size_t>(i)] += a.h_attn[li][o + static_cast<size_t>(i)];
        }
    }
}

// Loss (and optionally gradients) for one sequence. Gradients accumulate
// into `g`; dh buffers are scratch shared across calls.
double seq_loss_grads(const ModelConfig& cfg, const Weights& w, const std::vector<int>& input,
                      const std::vector<int>& target,
                      const std::vector<std::pair<int, double>>& losses, Weights* g) {
    const int S = static_cast<int>(input.size());
    const int d = cfg.d_model;
    const int dffn = cfg.d_ffn;
    const int H = cfg.n_heads;
    const int dh = cfg.d_head;
    const int V = cfg.vocab_size;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    SeqActs a;
    seq_forward(cfg, w, input, a);

    // dh[l]: gradient wrt the output of block l (l=0 is the embedding)
    std::vector<std::vector<float>> dhs(static_cast<size_t>(cfg.n_layers + 1),
                                        std::vector<float>(static_cast<size_t>(S) * d, 0.0f));

    double loss = 0.0;
    std::vector<float> nf(static_cast<size_t>(d)), z(static_cast<size_t>(V));
    for (const auto& [l, sc] : losses) {
        const auto& hout = a.h[static_cast<size_t>(l + 1)];
        for (int t = 0; t < S; ++t) {
            const size_t o = static_cast<size_t>(t) * d;
            const float ir = kernels::rmsnorm(hout.data() + o, w.final_gain.data(), d, cfg.norm_epsilon, nf.data());
            kernels::matvec(w.output_head.data(), V, d, nf.data(), z.data());
            kernels::softmax_inplace(z.data(), V);
            const int y = target[static_cast<size_t>(t)];
            if (y < 0 || y >= V) throw ConfigError("target out of vocab");
            const double py = static_cast<double>(z[static_cast<size_t>(y)]);
            loss += sc * -std::log(std::max(py, 1e-9));
            if (!g) continue;

            // softmax + CE backward; the 1e-9 floor zeroes the gradient when hit
            std::vector<float> dz(static_cast<size_t>(V), 0.0f);
            if (py > 1e-9) {
                for (int i = 0; i < V; ++i) dz[static_cast<size_t>(i)] = static_cast<float>(sc) * z[static_cast<size_t>(i)];
                dz[static_cast<size_t>(y)] -= static_cast<float>(sc);
            }
            std::vector<float> dnf(static_cast<size_t>(d), 0.0f);
            kernels::matvec_t_accum(w.output_head.data(), V, d, dz.data(), dnf.data());
            kernels::outer_accum(g->output_head.data(), V, d, dz.data(), nf.data());
            rmsnorm_backward(hout.data() + o, w.final_gain.data(), ir, dnf.data(), d,
                             dhs[static_cast<size_t>(l + 1)].data() + o, g->final_gain.data());
        }
    }
    if (!g) return loss;

    std::vector<float> dctx(static_cast<size_t>(S) * d);
    std::vector<float> dq(static_cast<size_t>(S) * d), dk(static_cast<size_t>(S) * d), dv(static_cast<size_t>(S) * d);
    std::vector<float> dn1(static_cast<size_t>(d)), dn2(static_cast<size_t>(d));
    std::vector<float> du(static_cast<size_t>(dffn)), da(static_cast<size_t>(dffn));
    std::vector<float> dattn(static_cast<size_t>(d)), dhattn(static_cast<size_t>(S) * d);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const auto& lw = w.layers[static_cast<size_t>(l)];
        auto& gl = g->layers[static_cast<size_t>(l)];
        const size_t li = static_cast<size_t>(l);
        const auto& hin = a.h[li];
        auto& dout = dhs[li + 1];
        auto& din = dhs[li];

        std::fill(dhattn.begin(), dhattn.end(), 0.0f);
        for (int t = 0; t < S; ++t) {
            const size_t o = static_cast<size_t>(t) * d;
            const size_t of = static_cast<size_t>(t) * dffn;
            // ffn branch
            std::fill(da.begin(), da.end(), 0.0f);
            kernels::matvec_t_accum(lw.w2.data(), d, dffn, dout.data() + o, da.data());
            kernels::outer_accum(gl.w2.data(), d, dffn, dout.data() + o, a.u_act[li].data() + of);
            for (int i = 0; i < dffn; ++i) {
                const float u = a.u_pre[li][of + static_cast<size_t>(i)];
                const float s = 1.0f / (1.0f + std::exp(-u));
                du[static_cast<size_t>(i)] = da[static_cast<size_t>(i)] * s * (1.0f + u * (1.0f - s));
            }
            kernels::outer_accum(gl.w1.data(), dffn, d, du.data(), a.n2[li].data() + o);
            std::fill(dn2.begin(), dn2.end(), 0.0f);
            kernels::matvec_t_accum(lw.w1.data(), dffn, d, du.data(), dn2.data());
            // residual plus norm backward into h_attn
            for (int i = 0; i < d; ++i) dhattn[o + static_cast<size_t>(i)] += dout[o + static_cast<size_t>(i)];
            rmsnorm_backward(a.h_attn[li].data() + o, lw.ffn_gain.data(), a.inv_r2[li][static_cast<size_t>(t)],
                             dn2.data(), d, dhattn.data() + o, gl.ffn_gain.data());
        }

        // attention output projection
        std::fill(dctx.begin(), dctx.end(), 0.0f);
        for (int t = 0; t < S; ++t) {
            const size_t o = static_cast<size_t>(t) * d;
            kernels::matvec_t_accum(lw.wo.data(), d, d, dhattn.data() + o, dctx.data() + o);
            kernels::outer_accum(gl.wo.data(), d, d, dhattn.data() + o, a.ctx[li].data() + o);
        }

        // attention core backward
        std::fill(dq.begin(), dq.end(), 0.0f);
        std::fill(dk.begin(), dk.end(), 0.0f);
        std::fill(dv.begin(), dv.end(), 0.0f);
        for (int h = 0; h < H; ++h) {
            const int off = h * dh;
            std::vector<float> dsc(static_cast<size_t>(S));
            for (int t = 0; t < S; ++t) {
                const float* pr = a.probs[li].data() + (static_cast<size_t>(h) * S + t) * S;
                const float* dct = dctx.data() + static_cast<size_t>(t) * d + off;
                // da_j = dctx . v_j ; dv_j += p_j * dctx
                float dot = 0.0f;
                for (int j = 0; j <= t; ++j) {
                    const float* vj = a.v[li].data() + static_cast<size_t>(j) * d + off;
                    float dd = 0.0f;
                    for (int i = 0; i < dh; ++i) dd += dct[i] * vj[i];
                    dsc[static_cast<size_t>(j)] = dd;
                    dot += dd * pr[j];
                    float* dvj = dv.data() + static_cast<size_t>(j) * d + off;
                    for (int i = 0; i < dh; ++i) dvj[i] += pr[j] * dct[i];
                }
                // softmax backward
                for (int j = 0; j <= t; ++j) dsc[static_cast<size_t>(j)] = pr[j] * (dsc[static_cast<size_t>(j)] - dot);
                const float* qt = a.q[li].data() + static_cast<size_t>(t) * d + off;
                float* dqt = dq.data() + static_cast<size_t>(t) * d + off;
                for (int j = 0; j <= t; ++j) {
                    const float ds = dsc[static_cast<size_t>(j)] * scale;
                    const float* kj = a.k[li].data() + static_cast<size_t>(j) * d + off;
                    float* dkj = dk.data() + static_cast<size_t>(j) * d + off;
                    for (int i = 0; i < dh; ++i) {
                        dqt[i] += ds * kj[i];
                        dkj[i] += ds * qt[i];
                    }
                }
            }
        }

        for (int t = 0; t < S; ++t) {
            const size_t o = static_cast<size_t>(t) * d;
            kernels::rope_inverse_inplace(dq.data() + o, H, dh, t);
            kernels::rope_inverse_inplace(dk.data() + o, H, dh, t);
            std::fill(dn1.begin(), dn1.end(), 0.0f);
            kernels::matvec_t_accum(lw.wq.data(), d, d, dq.data() + o, dn1.data());
            kernels::matvec_t_accum(lw.wk.data(), d, d, dk.data() + o, dn1.data());
            kernels::matvec_t_accum(lw.wv.data(), d, d, dv.data() + o, dn1.data());
            kernels::outer_accum(gl.wq.data(), d, d, dq.data() + o, a.n1[li].data() + o);
            kernels::outer_accum(gl.wk.data(), d, d, dk.data() + o, a.n1[li].data() + o);
            kernels::outer_accum(gl.wv.data(), d, d, dv.data() + o, a.n1[li].data() + o);
            // residual: h_attn = attn_out + h_in
            for (int i = 0; i < d; ++i) din[o + static_cast<size_t>(i)] += dhattn[o + static_cast<size_t>(i)];
            rmsnorm_backward(hin.data() + o, lw.attn_gain.data(), a.inv_r1[li][static_cast<size_t>(t)],
                             dn1.data(), d, din.data() + o, gl.attn_gain.data());
        }
    }

    // embedding scatter
    for (int t = 0; t < S; ++t) {
        float* ge = g->token_embedding.data() + static_cast<size_t>(input[static_cast<size_t>(t)]) * d;
        const float* dh0 = dhs[0].data() + static_cast<size_t>(t) * d;
        for (int i = 0; i < d; ++i) ge[i] += dh0[i];
    }
    return loss;
}

} // namespace

double loss_and_grads(const ModelConfig& cfg, const Weights& w, const Batch& batch,
                      const TrainSettings& settings, Weights* grads) {
    settings.validate(cfg);
    if (batch.inputs.empty() || batch.inputs.size() != batch.targets.size())
        throw ConfigError("bad batch");
    const int total = static_cast<int>(batch.inputs.size()) * static_cast<int>(batch.inputs[0].size());
    const auto losses = loss_layers(cfg, settings, total);
    double loss = 0.0;
    // per-position scales already include 1/(B*S), so this sums to the mean
    // per-token loss in nats
    for (size_t s = 0; s < batch.inputs.size(); ++s)
        loss += seq_loss_grads(cfg, w, batch.inputs[s], batch.targets[s], losses, grads);
    return loss;
}

AdamState make_adam_state(const ModelConfig& cfg) {
    return AdamState{zeros_like(cfg), zeros_like(cfg), 0};
}

double train_step(const ModelConfig& cfg, Weights& w, AdamState& opt, const Batch& batch,
                  const TrainSettings& settings) {
    Weights grads = zeros_like(cfg);
    const double loss = loss_and_grads(cfg, w, batch, settings, &grads);
    if (!std::isfinite(loss)) throw ConfigError("non-finite loss at step " + std::to_string(opt.step));

    opt.step += 1;
    const float warm = settings.warmup_steps > 0
                           ? std::min(1.0f, static_cast<float>(opt.step) / static_cast<float>(settings.warmup_steps))
                           : 1.0f;
    const float lr = settings.learning_rate * warm;
    const float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
    const float bc1 = 1.0f - std::pow(b1, static_cast<float>(opt.step));
    const float bc2 = 1.0f - std::pow(b2, static_cast<float>(opt.step));

    auto wt = tensor_list(w);
    auto gt = tensor_list(grads);
    auto mt = tensor_list(opt.m);
    auto vt = tensor_list(opt.v);
    for (size_t ti = 0; ti < wt.size(); ++ti) {
        float* wp = wt[ti].data->data();
        const float* gp = gt[ti].data->data();
        float* mp = mt[ti].data->data();
        float* vp = vt[ti].data->data();
        const size_t n = wt[ti].data->size();
#pragma omp parallel for schedule(static) if (n >= 16384)
        for (long long i = 0; i < static_cast<long long>(n); ++i) {
            mp[i] = b1 * mp[i] + (1.0f - b1) * gp[i];
            vp[i] = b2 * vp[i] + (1.0f - b2) * gp[i] * gp[i];
            const float mhat = mp[i] / bc1;
            const float vhat = vp[i] / bc2;
            wp[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
    return loss;
}

Batch sample_batch(const std::vector<int>& corpus, int batch_size, int seq_len, uint64_t seed, int step) {
    if (static_cast<int>(corpus.size()) <= seq_len) throw ConfigError("corpus shorter than seq_len + 1");
    Batch b;
    const uint64_t span = corpus.size() - static_cast<size_t>(seq_len) - 1;
    for (int s = 0; s < batch_size; ++s) {
        const uint64_t idx = splitmix64(seed ^ splitmix64(0x42a7c15ull + static_cast<uint64_t>(step) * 1315423911ull +
                                                          static_cast<uint64_t>(s))) %
                             (span + 1);
        std::vector<int> in(corpus.begin() + static_cast<long>(idx), corpus.begin() + static_cast<long>(idx) + seq_len);
        std::vector<int> tg(corpus.begin() + static_cast<long>(idx) + 1,
                            corpus.begin() + static_cast<long>(idx) + 1 + seq_len);
        b.inputs.push_back(std::move(in));
        b.targets.push_back(std::move(tg));
    }
    return b;
}

TrainResult train_run(const ModelConfig& cfg, const std::vector<int>& corpus, const TrainSettings& settings) {
    settings.validate(cfg);
    if (static_cast<int>(corpus.size()) <= settings.seq_len) throw ConfigError("corpus too short");
    TrainResult res;
    res.weights = init_model(cfg);
    AdamState opt = make_adam_state(cfg);
    for (int step = 0; step < settings.steps; ++step) {
        Batch b = sample_batch(corpus, settings.batch_size, settings.seq_len, settings.seed, step);
        const double loss = train_step(cfg, res.weights, opt, b, settings);
        res.loss_curve.emplace_back(step, loss);
    }
    return res;
}

double mean_intermediate_cross_entropy(const ModelConfig& cfg, const Weights& w, const Batch& batch) {
    if (cfg.n_layers < 2) throw ConfigError("needs at least 2 layers");
    TrainSettings s;
    s.regime = TrainRegime::Joint;
    s.seq_len = static_cast<int>(batch.inputs[0].size());
    s.batch_size = static_cast<int>(batch.inputs.size());
    s.layer_loss_weights.assign(static_cast<size_t>(cfg.n_layers), 1.0f);
    s.layer_loss_weights.back() = 0.0f; // intermediate layers only
    return loss_and_grads(cfg, w, batch, s, nullptr);
}

} // namespace exitlab
