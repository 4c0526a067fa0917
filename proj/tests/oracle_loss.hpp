#pragma once

// Double-precision reimplementation of the teacher-forced loss, independent
// of the f32 engine. Used as a finite-difference baseline when validating the
// analytic gradients: accumulating in double keeps the central-difference
// noise far below the comparison tolerance.

#include <algorithm>
#include <cmath>
#include <vector>

#include "exitlab/model.hpp"
#include "exitlab/trainer.hpp"

namespace testutil {

using dvec = std::vector<double>;

inline dvec oracle_rmsnorm(const dvec& x, const std::vector<float>& gain, double eps) {
    double ss = 0.0;
    for (double v : x) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + eps);
    dvec out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(gain[i]) * x[i] * inv;
    return out;
}

inline dvec oracle_matvec(const std::vector<float>& w, int rows, int cols, const dvec& x) {
    dvec out(static_cast<size_t>(rows), 0.0);
    for (int r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int c = 0; c < cols; ++c)
            acc += static_cast<double>(w[static_cast<size_t>(r) * cols + c]) * x[static_cast<size_t>(c)];
        out[static_cast<size_t>(r)] = acc;
    }
    return out;
}

inline void oracle_rope(dvec& v, int n_heads, int d_head, int pos) {
    const int half = d_head / 2;
    for (int h = 0; h < n_heads; ++h) {
        double* p = v.data() + static_cast<size_t>(h) * d_head;
        for (int i = 0; i < half; ++i) {
            const double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(d_head));
            const double theta = pos * freq;
            const double c = std::cos(theta), s = std::sin(theta);
            const double a = p[2 * i], b = p[2 * i + 1];
            p[2 * i] = a * c - b * s;
            p[2 * i + 1] = a * s + b * c;
        }
    }
}

inline dvec oracle_softmax(dvec z) {
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (auto& v : z) v /= sum;
    return z;
}

inline double oracle_loss(const exitlab::ModelConfig& cfg, const exitlab::Weights& w,
                          const std::vector<int>& input, const std::vector<int>& target,
                          exitlab::TrainRegime regime) {
    using exitlab::TrainRegime;
    const int S = static_cast<int>(input.size());
    const int d = cfg.d_model;
    const int H = cfg.n_heads, dh = cfg.d_head;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<dvec> h(static_cast<size_t>(S));
    for (int t = 0; t < S; ++t) {
        h[static_cast<size_t>(t)].assign(
            w.token_embedding.begin() + static_cast<size_t>(input[static_cast<size_t>(t)]) * d,
            w.token_embedding.begin() + static_cast<size_t>(input[static_cast<size_t>(t)] + 1) * d);
    }

    auto head_ce = [&](const dvec& hv, int y) {
        auto nf = oracle_rmsnorm(hv, w.final_gain, cfg.norm_epsilon);
        auto p = oracle_softmax(oracle_matvec(w.output_head, cfg.vocab_size, d, nf));
        return -std::log(std::max(p[static_cast<size_t>(y)], 1e-9));
    };

    double loss = 0.0;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& lw = w.layers[static_cast<size_t>(l)];
        std::vector<dvec> q(static_cast<size_t>(S)), k(static_cast<size_t>(S)), v(static_cast<size_t>(S));
        for (int t = 0; t < S; ++t) {
            auto n1 = oracle_rmsnorm(h[static_cast<size_t>(t)], lw.attn_gain, cfg.norm_epsilon);
            q[static_cast<size_t>(t)] = oracle_matvec(lw.wq, d, d, n1);
            k[static_cast<size_t>(t)] = oracle_matvec(lw.wk, d, d, n1);
            v[static_cast<size_t>(t)] = oracle_matvec(lw.wv, d, d, n1);
            oracle_rope(q[static_cast<size_t>(t)], H, dh, t);
            oracle_rope(k[static_cast<size_t>(t)], H, dh, t);
        }
        for (int t = S - 1; t >= 0; --t) {
            dvec ctx(static_cast<size_t>(d), 0.0);
            for (int hd = 0; hd < H; ++hd) {
                const int off = hd * dh;
                dvec scores(static_cast<size_t>(t) + 1);
                for (int j = 0; j <= t; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < dh; ++i)
                        acc += q[static_cast<size_t>(t)][static_cast<size_t>(off + i)] *
                               k[static_cast<size_t>(j)][static_cast<size_t>(off + i)];
                    scores[static_cast<size_t>(j)] = acc * scale;
                }
                auto p = oracle_softmax(scores);
                for (int i = 0; i < dh; ++i) {
                    double acc = 0.0;
                    for (int j = 0; j <= t; ++j)
                        acc += p[static_cast<size_t>(j)] * v[static_cast<size_t>(j)][static_cast<size_t>(off + i)];
                    ctx[static_cast<size_t>(off + i)] = acc;
                }
            }
            auto attn = oracle_matvec(lw.wo, d, d, ctx);
            dvec h_attn(static_cast<size_t>(d));
            for (int i = 0; i < d; ++i)
                h_attn[static_cast<size_t>(i)] = attn[static_cast<size_t>(i)] + h[static_cast<size_t>(t)][static_cast<size_t>(i)];
            auto n2 = oracle_rmsnorm(h_attn, lw.ffn_gain, cfg.norm_epsilon);
            auto u = oracle_matvec(lw.w1, cfg.d_ffn, d, n2);
            for (auto& x : u) x = x / (1.0 + std::exp(-x));
            auto f = oracle_matvec(lw.w2, d, cfg.d_ffn, u);
            for (int i = 0; i < d; ++i)
                h[static_cast<size_t>(t)][static_cast<size_t>(i)] = f[static_cast<size_t>(i)] + h_attn[static_cast<size_t>(i)];
        }
        if (regime == TrainRegime::Joint) {
            for (int t = 0; t < S; ++t) loss += head_ce(h[static_cast<size_t>(t)], target[static_cast<size_t>(t)]);
        } else if (l == cfg.n_layers - 1) {
            for (int t = 0; t < S; ++t) loss += head_ce(h[static_cast<size_t>(t)], target[static_cast<size_t>(t)]);
        }
    }
    const double denom =
        regime == TrainRegime::Joint ? static_cast<double>(cfg.n_layers) * S : static_cast<double>(S);
    return loss / denom;
}

} // namespace testutil
