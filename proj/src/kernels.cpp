#include "exitlab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace exitlab::kernels {

void matvec(const float* w, int rows, int cols, const float* x, float* out) {
#pragma omp parallel for schedule(static) if (rows * cols >= 16384)
    for (int i = 0; i < rows; ++i) {
        const float* row = w + static_cast<size_t>(i) * cols;
        float acc = 0.0f;
        for (int j = 0; j < cols; ++j) acc += row[j] * x[j];
        out[i] = acc;
    }
}

void matvec_t_accum(const float* w, int rows, int cols, const float* a, float* out) {
#pragma omp parallel for schedule(static) if (rows * cols >= 16384)
    for (int j = 0; j < cols; ++j) {
        float acc = 0.0f;
        for (int i = 0; i < rows; ++i) acc += w[static_cast<size_t>(i) * cols + j] * a[i];
        out[j] += acc;
    }
}

void outer_accum(float* w, int rows, int cols, const float* a, const float* b) {
#pragma omp parallel for schedule(static) if (rows * cols >= 16384)
    for (int i = 0; i < rows; ++i) {
        float* row = w + static_cast<size_t>(i) * cols;
        const float ai = a[i];
        for (int j = 0; j < cols; ++j) row[j] += ai * b[j];
    }
}

float rmsnorm(const float* x, const float* gain, int n, float eps, float* out) {
    float ss = 0.0f;
    for (int i = 0; i < n; ++i) ss += x[i] * x[i];
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(n) + eps);
    for (int i = 0; i < n; ++i) out[i] = gain[i] * x[i] * inv;
    return inv;
}

void softmax_inplace(float* x, int n) {
    float mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    float sum = 0.0f;
    for (int i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        sum += x[i];
    }
    const float inv = 1.0f / sum;
    for (int i = 0; i < n; ++i) x[i] *= inv;
}

namespace {

inline void rope_rotate(float* x, int n_heads, int d_head, int pos, float sign) {
    const int half = d_head / 2;
    for (int h = 0; h < n_heads; ++h) {
        float* v = x + h * d_head;
        for (int i = 0; i < half; ++i) {
            const float freq = std::pow(10000.0f, -2.0f * static_cast<float>(i) / static_cast<float>(d_head));
            const float theta = sign * static_cast<float>(pos) * freq;
            const float c = std::cos(theta);
            const float s = std::sin(theta);
            const float a = v[2 * i];
            const float b = v[2 * i + 1];
            v[2 * i] = a * c - b * s;
            v[2 * i + 1] = a * s + b * c;
        }
    }
}

} // namespace

void rope_inplace(float* x, int n_heads, int d_head, int pos) {
    rope_rotate(x, n_heads, d_head, pos, 1.0f);
}

void rope_inverse_inplace(float* x, int n_heads, int d_head, int pos) {
    rope_rotate(x, n_heads, d_head, pos, -1.0f);
}

void silu_inplace(float* x, int n) {
    for (int i = 0; i < n; ++i) {
        const float s = 1.0f / (1.0f + std::exp(-x[i]));
        x[i] = x[i] * s;
    }
}

void attention(const float* q, const float* k_past, const float* v_past, int count,
               const float* k_cur, const float* v_cur, int n_heads, int d_head, float* out) {
    const int dim = n_heads * d_head;
    const float scale = 1.0f / std::sqrt(static_cast<float>(d_head));
#pragma omp parallel for schedule(static) if (n_heads > 1 && count >= 32)
    for (int h = 0; h < n_heads; ++h) {
        const int off = h * d_head;
        std::vector<float> scores(static_cast<size_t>(count) + 1);
        for (int p = 0; p <= count; ++p) {
            const float* kp = (p < count) ? k_past + static_cast<size_t>(p) * dim + off : k_cur + off;
            float acc = 0.0f;
            for (int i = 0; i < d_head; ++i) acc += q[off + i] * kp[i];
            scores[p] = acc * scale;
        }
        softmax_inplace(scores.data(), count + 1);
        for (int i = 0; i < d_head; ++i) {
            float acc = 0.0f;
            for (int p = 0; p <= count; ++p) {
                const float* vp = (p < count) ? v_past + static_cast<size_t>(p) * dim + off : v_cur + off;
                acc += scores[p] * vp[i];
            }
            out[off + i] = acc;
        }
    }
}

namespace serial {

void matvec(const float* w, int rows, int cols, const float* x, float* out) {
    for (int i = 0; i < rows; ++i) {
        const float* row = w + static_cast<size_t>(i) * cols;
        float acc = 0.0f;
        for (int j = 0; j < cols; ++j) acc += row[j] * x[j];
        out[i] = acc;
    }
}

float rmsnorm(const float* x, const float* gain, int n, float eps, float* out) {
    float ss = 0.0f;
    for (int i = 0; i < n; ++i) ss += x[i] * x[i];
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(n) + eps);
    for (int i = 0; i < n; ++i) out[i] = gain[i] * x[i] * inv;
    return inv;
}

void softmax_inplace(float* x, int n) { kernels::softmax_inplace(x, n); }

void rope_inplace(float* x, int n_heads, int d_head, int pos) {
    rope_rotate(x, n_heads, d_head, pos, 1.0f);
}

void silu_inplace(float* x, int n) { kernels::silu_inplace(x, n); }

void attention(const float* q, const float* k_past, const float* v_past, int count,
               const float* k_cur, const float* v_cur, int n_heads, int d_head, float* out) {
    const int dim = n_heads * d_head;
    const float scale = 1.0f / std::sqrt(static_cast<float>(d_head));
    std::vector<float> scores(static_cast<size_t>(count) + 1);
    for (int h = 0; h < n_heads; ++h) {
        const int off = h * d_head;
        for (int p = 0; p <= count; ++p) {
            const float* kp = (p < count) ? k_past + static_cast<size_t>(p) * dim + off : k_cur + off;
            float acc = 0.0f;
            for (int i = 0; i < d_head; ++i) acc += q[off + i] * kp[i];
            scores[p] = acc * scale;
        }
        softmax_inplace(scores.data(), count + 1);
        for (int i = 0; i < d_head; ++i) {
            float acc = 0.0f;
            for (int p = 0; p <= count; ++p) {
                const float* vp = (p < count) ? v_past + static_cast<size_t>(p) * dim + off : v_cur + off;
                acc += scores[p] * vp[i];
            }
            out[off + i] = acc;
        }
    }
}

} // namespace serial

} // namespace exitlab::kernels
