// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

namespace morekit::kernels {

namespace {

int threads_from_env() {
  const char* env = std::getenv("MORE_KIT_THREADS");
  if (env == nullptr) return 1;
  try {
    return std::max(1, std::stoi(env));
  } catch (...) {
    return 1;
  }
}

std::atomic<int>& thread_setting() {
  static std::atomic<int> n{threads_from_env()};
  return n;
}

using Idx = std::ptrdiff_t;

// Row i of C for the three gemm layouts. Shared by both implementations so
// the per-element accumulation order is identical.
inline void gemm_nn_row(const double* a, const double* b, double* c, std::size_t i,
                        std::size_t k, std::size_t n) {
  double* ci = c + i * n;
  const double* ai = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = ai[p];
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
  }
}

inline void gemm_nt_row(const double* a, const double* b, double* c, std::size_t i,
                        std::size_t k, std::size_t n) {
  double* ci = c + i * n;
  const double* ai = a + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const double* bj = b + j * k;
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
    ci[j] += s;
  }
}

inline void gemm_tn_row(const double* a, const double* b, double* c, std::size_t i,
                        std::size_t m, std::size_t k, std::size_t n) {
  double* ci = c + i * n;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * m + i];
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
  }
}

// Attention for one sample: all heads, forward.
void attention_sample_forward(const AttentionShape& s, std::size_t b, const double* q,
                              const double* k, const double* v, double* probs, double* out) {
  const std::size_t cols = s.columns();
  const std::size_t dh = s.head_dim();
  const std::size_t S = s.seq_len;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t c0 = b * S;
  for (std::size_t h = 0; h < s.num_heads; ++h) {
    const std::size_t r0 = h * dh;
    double* P = probs + (b * s.num_heads + h) * S * S;
    for (std::size_t i = 0; i < S; ++i) {
      double* row = P + i * S;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < S; ++j) {
        double dot = 0.0;
        for (std::size_t r = r0; r < r0 + dh; ++r) dot += q[r * cols + c0 + i] * k[r * cols + c0 + j];
        row[j] = dot * inv_scale;
        mx = std::max(mx, row[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < S; ++j) {
        row[j] = std::exp(row[j] - mx);
        z += row[j];
      }
      for (std::size_t j = 0; j < S; ++j) row[j] /= z;
      for (std::size_t r = r0; r < r0 + dh; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < S; ++j) acc += row[j] * v[r * cols + c0 + j];
        out[r * cols + c0 + i] = acc;
      }
    }
  }
}

void attention_sample_backward(const AttentionShape& s, std::size_t b, const double* q,
                               const double* k, const double* v, const double* probs,
                               const double* dout, double* dq, double* dk, double* dv) {
  const std::size_t cols = s.columns();
  const std::size_t dh = s.head_dim();
  const std::size_t S = s.seq_len;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t c0 = b * S;
  std::vector<double> dscore(S);
  for (std::size_t h = 0; h < s.num_heads; ++h) {
    const std::size_t r0 = h * dh;
    const double* P = probs + (b * s.num_heads + h) * S * S;
    for (std::size_t i = 0; i < S; ++i) {
      const double* row = P + i * S;
      // dP[i][j] = <dout_i, v_j>; dV[:, j] += P[i][j] dout_i
      double weighted = 0.0;
      for (std::size_t j = 0; j < S; ++j) {
        double dp = 0.0;
        for (std::size_t r = r0; r < r0 + dh; ++r) {
          dp += dout[r * cols + c0 + i] * v[r * cols + c0 + j];
          dv[r * cols + c0 + j] += row[j] * dout[r * cols + c0 + i];
        }
        dscore[j] = dp;
        weighted += row[j] * dp;
      }
      for (std::size_t j = 0; j < S; ++j) dscore[j] = row[j] * (dscore[j] - weighted) * inv_scale;
      for (std::size_t j = 0; j < S; ++j) {
        for (std::size_t r = r0; r < r0 + dh; ++r) {
          dq[r * cols + c0 + i] += dscore[j] * k[r * cols + c0 + j];
          dk[r * cols + c0 + j] += dscore[j] * q[r * cols + c0 + i];
        }
      }
    }
  }
}

}  // namespace

int thread_count() { return thread_setting().load(); }
void set_thread_count(int n) { thread_setting().store(std::max(1, n)); }

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) gemm_nn_row(a.data(), b.data(), c.data(), i, k, n);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) gemm_nt_row(a.data(), b.data(), c.data(), i, k, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) gemm_tn_row(a.data(), b.data(), c.data(), i, m, k, n);
}

void attention_forward(const AttentionShape& s, std::span<const double> q,
                       std::span<const double> k, std::span<const double> v,
                       std::span<double> probs, std::span<double> out) {
  for (std::size_t b = 0; b < s.num_samples; ++b)
    attention_sample_forward(s, b, q.data(), k.data(), v.data(), probs.data(), out.data());
}

void attention_backward(const AttentionShape& s, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs, std::span<const double> dout,
                        std::span<double> dq, std::span<double> dk, std::span<double> dv) {
  for (std::size_t b = 0; b < s.num_samples; ++b)
    attention_sample_backward(s, b, q.data(), k.data(), v.data(), probs.data(), dout.data(),
                              dq.data(), dk.data(), dv.data());
}

}  // namespace serial

namespace omp {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, int threads) {
#pragma omp parallel for num_threads(threads) schedule(static)
  for (Idx i = 0; i < static_cast<Idx>(m); ++i)
    gemm_nn_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, n);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, int threads) {
#pragma omp parallel for num_threads(threads) schedule(static)
  for (Idx i = 0; i < static_cast<Idx>(m); ++i)
    gemm_nt_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, int threads) {
#pragma omp parallel for num_threads(threads) schedule(static)
  for (Idx i = 0; i < static_cast<Idx>(m); ++i)
    gemm_tn_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), m, k, n);
}

void attention_forward(const AttentionShape& s, std::span<const double> q,
                       std::span<const double> k, std::span<const double> v,
                       std::span<double> probs, std::span<double> out, int threads) {
#pragma omp parallel for num_threads(threads) schedule(static)
  for (Idx b = 0; b < static_cast<Idx>(s.num_samples); ++b)
    attention_sample_forward(s, static_cast<std::size_t>(b), q.data(), k.data(), v.data(),
                             probs.data(), out.data());
}

void attention_backward(const AttentionShape& s, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs, std::span<const double> dout,
                        std::span<double> dq, std::span<double> dk, std::span<double> dv,
                        int threads) {
#pragma omp parallel for num_threads(threads) schedule(static)
  for (Idx b = 0; b < static_cast<Idx>(s.num_samples); ++b)
    attention_sample_backward(s, static_cast<std::size_t>(b), q.data(), k.data(), v.data(),
                              probs.data(), dout.data(), dq.data(), dk.data(), dv.data());
}

}  // namespace omp

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const int t = thread_count();
  if (t > 1) omp::gemm_nn(a, b, c, m, k, n, t);
  else serial::gemm_nn(a, b, c, m, k, n);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const int t = thread_count();
  if (t > 1) omp::gemm_nt(a, b, c, m, k, n, t);
  else serial::gemm_nt(a, b, c, m, k, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const int t = thread_count();
  if (t > 1) omp::gemm_tn(a, b, c, m, k, n, t);
  else serial::gemm_tn(a, b, c, m, k, n);
}

void attention_forward(const AttentionShape& s, std::span<const double> q,
                       std::span<const double> k, std::span<const double> v,
                       std::span<double> probs, std::span<double> out) {
  const int t = thread_count();
  if (t > 1) omp::attention_forward(s, q, k, v, probs, out, t);
  else serial::attention_forward(s, q, k, v, probs, out);
}

void attention_backward(const AttentionShape& s, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs, std::span<const double> dout,
                        std::span<double> dq, std::span<double> dk, std::span<double> dv) {
  const int t = thread_count();
  if (t > 1) omp::attention_backward(s, q, k, v, probs, dout, dq, dk, dv, t);
  else serial::attention_backward(s, q, k, v, probs, dout, dq, dk, dv);
}

}  // namespace morekit::kernels
