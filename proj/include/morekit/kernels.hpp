// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0
//
// Compute kernels behind the autograd ops. Each kernel has a serial reference
// in `kernels::serial` and an OpenMP version in `kernels::omp`. The OpenMP
// versions partition only independent output rows (or independent samples),
// so every output element is accumulated in the same order as the serial
// reference and results are bit-identical for any thread count.

#pragma once

#include <cstddef>
#include <span>

namespace morekit::kernels {

/// Threads used by the dispatching kernels; read once from MORE_KIT_THREADS
/// (default 1) unless overridden with set_thread_count().
int thread_count();
void set_thread_count(int n);

/// Geometry of a batched multi-head attention over column-major sequences:
/// activations are width × (num_samples · seq_len), sample b owning columns
/// [b·seq_len, (b+1)·seq_len), head h owning rows [h·head_dim, (h+1)·head_dim).
struct AttentionShape {
  std::size_t width = 0;
  std::size_t num_heads = 0;
  std::size_t num_samples = 0;
  std::size_t seq_len = 0;

  std::size_t head_dim() const { return width / num_heads; }
  std::size_t columns() const { return num_samples * seq_len; }
  std::size_t prob_size() const { return num_samples * num_heads * seq_len * seq_len; }
};

// C[m×n] += A[m×k] · B[k×n]
// C[m×n] += A[m×k] · B[n×k]^T
// C[m×n] += A[k×m]^T · B[k×n]
namespace serial {
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void attention_forward(const AttentionShape& s, std::span<const double> q,
                       std::span<const double> k, std::span<const double> v,
                       std::span<double> probs, std::span<double> out);
void attention_backward(const AttentionShape& s, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs, std::span<const double> dout,
                        std::span<double> dq, std::span<double> dk, std::span<double> dv);
}  // namespace serial

namespace omp {
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, int threads);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, int threads);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, int threads);
void attention_forward(const AttentionShape& s, std::span<const double> q,
                       std::span<const double> k, std::span<const double> v,
                       std::span<double> probs, std::span<double> out, int threads);
void attention_backward(const AttentionShape& s, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs, std::span<const double> dout,
                        std::span<double> dq, std::span<double> dk, std::span<double> dv,
                        int threads);
}  // namespace omp

// Dispatch on thread_count(): serial when 1, OpenMP otherwise.
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void attention_forward(const AttentionShape& s, std::span<const double> q,
                       std::span<const double> k, std::span<const double> v,
                       std::span<double> probs, std::span<double> out);
void attention_backward(const AttentionShape& s, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs, std::span<const double> dout,
                        std::span<double> dq, std::span<double> dk, std::span<double> dv);

}  // namespace morekit::kernels
