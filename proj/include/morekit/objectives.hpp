// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: contrastive task-embedding loss, token cross-entropy
// and their weighted sum.

#pragma once

#include <cstddef>
#include <span>

#include "morekit/autograd.hpp"

namespace morekit {

inline constexpr double kDefaultLambda = 0.1;
inline constexpr double kDefaultTau = 0.05;

enum class ContrastiveSign {
  /// −(1/N) Σ log softmax: minimized when samples sit near their task embedding.
  info_nce,
  /// +(1/N) Σ log softmax, exactly as the objective is printed.
  literal,
};

/// Contrastive loss of a task-homogeneous batch against the embedding table.
///   samples: h×N, one column per sample representation
///   embeddings: T×h, row k is e_k
/// Uses cosine similarity; throws std::invalid_argument on an empty batch and
/// std::domain_error on zero-norm vectors.
ag::Var contrastive_loss(ag::Var samples, std::size_t task, ag::Var embeddings, double tau,
                         ContrastiveSign sign = ContrastiveSign::info_nce);

/// Mean over positions of −log(predicted[target, position]). `predicted` is
/// vocab × positions with columns summing to 1 (checked to 1e-9).
ag::Var generation_loss(ag::Var predicted, std::span<const std::size_t> targets);

/// gen + lambda·con
ag::Var total_loss(ag::Var gen, ag::Var con, double lambda);

struct LossReport {
  double gen_loss = 0.0;
  double con_loss = 0.0;
  double total = 0.0;
  double lambda = kDefaultLambda;

  static LossReport make(double gen, double con, double lambda) {
    return {gen, con, gen + lambda * con, lambda};
  }
};

}  // namespace morekit
