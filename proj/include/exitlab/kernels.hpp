#pragma once

#include <cstddef>

// Dense kernels for the forward pass. The primary versions parallelize over
// independent output elements with OpenMP; per-element summation order is
// fixed, so results are bit-identical for any thread count. `serial` holds
// straight-line reference implementations used by tests and the benchmark.

namespace exitlab::kernels {

// out = W x, W is rows x cols row-major
void matvec(const float* w, int rows, int cols, const float* x, float* out);

// out_j = sum_i W[i][j] a_i  (transpose matvec, accumulated into out)
void matvec_t_accum(const float* w, int rows, int cols, const float* a, float* out);

// dW[i][j] += a_i * b_j
void outer_accum(float* w, int rows, int cols, const float* a, const float* b);

// out_i = gain_i * x_i / sqrt(mean(x^2) + eps); returns the inverse rms
float rmsnorm(const float* x, const float* gain, int n, float eps, float* out);

void softmax_inplace(float* x, int n);

// Rotary position encoding applied in-place to a [n_heads x d_head] vector.
void rope_inplace(float* x, int n_heads, int d_head, int pos);

// Inverse rotation, used by the backward pass.
void rope_inverse_inplace(float* x, int n_heads, int d_head, int pos);

void silu_inplace(float* x, int n);

// Causal self-attention for one query token. k_past/v_past hold `count`
// rows of n_heads*d_head floats; k_cur/v_cur are this token's fresh
// projections and take part as the last (self) position.
void attention(const float* q, const float* k_past, const float* v_past, int count,
               const float* k_cur, const float* v_cur, int n_heads, int d_head, float* out);

namespace serial {

void matvec(const float* w, int rows, int cols, const float* x, float* out);
float rmsnorm(const float* x, const float* gain, int n, float eps, float* out);
void softmax_inplace(float* x, int n);
void rope_inplace(float* x, int n_heads, int d_head, int pos);
void silu_inplace(float* x, int n);
void attention(const float* q, const float* k_past, const float* v_past, int count,
               const float* k_cur, const float* v_cur, int n_heads, int d_head, float* out);

} // namespace serial

} // namespace exitlab::kernels
