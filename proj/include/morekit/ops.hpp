// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable ops over ag::Var. Matrices are row-major; vectors are
// columns (n×1). Every op's backward accumulates into its input gradients.

#pragma once

#include <cstddef>
#include <span>

#include "morekit/autograd.hpp"

namespace morekit::ag {

inline constexpr double kLogFloor = 1e-300;

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// a · s for a 1×1 node s.
Var scale_by(Var a, Var s);
/// Row i of a (m×n) multiplied by c[i] (c is m×1).
Var mul_rows(Var a, Var c);
Var transpose(Var a);

/// Natural log with inputs clamped below at kLogFloor.
Var log(Var a);
Var exp(Var a);

Var sum(Var a);
/// axis 0 averages over rows (→ 1×n), axis 1 over columns (→ m×1).
Var mean(Var a, int axis);
Var mean_all(Var a);

/// Column-wise softmax of a / temperature, computed with max-subtraction.
Var softmax(Var a, double temperature = 1.0);

Var slice_rows(Var a, std::size_t k);
Var slice_cols(Var a, std::size_t k);
/// Row `row` of a as a 1×n node.
Var select_row(Var a, std::size_t row);
/// Columns of a at `cols`, in order.
Var gather_cols(Var a, std::span<const std::size_t> cols);
/// Element `i` of the flattened tensor as a 1×1 node.
Var index(Var a, std::size_t i);

/// Forward identity; contributes no gradient.
Var stop_gradient(Var a);
/// Constant n×1 column with a single 1 at `i`.
Var one_hot(Graph& g, std::size_t i, std::size_t length);
/// Constant one-hot of argmax (lowest index on ties), same shape as a.
Var one_hot_argmax(Var a);

/// Cosine similarity between the rows of e (T×h) and the columns of x (h×N),
/// giving T×N. Throws std::domain_error on any zero-norm vector.
Var cosine_similarity(Var e, Var x);

/// Mean over columns j of −log(probs[targets[j], j]).
Var cross_entropy(Var probs, std::span<const std::size_t> targets);

/// Tanh-approximated GELU.
Var gelu(Var a);
/// Normalizes each column to zero mean and unit variance (no affine terms).
Var layer_norm_cols(Var a, double eps = 1e-5);
/// Averages consecutive groups of `group` columns: m×(N·group) → m×N.
Var mean_pool_cols(Var a, std::size_t group);
/// Bidirectional multi-head attention; q, k, v are width × (N·seq_len).
Var attention(Var q, Var k, Var v, std::size_t num_heads, std::size_t seq_len);

}  // namespace morekit::ag
