// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/objectives.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "morekit/ops.hpp"

namespace morekit {

ag::Var contrastive_loss(ag::Var samples, std::size_t task, ag::Var embeddings, double tau,
                         ContrastiveSign sign) {
  const Tensor& H = samples.value();
  const Tensor& E = embeddings.value();
  if (H.empty() || H.cols() == 0) throw std::invalid_argument("contrastive_loss: empty batch");
  if (task >= E.rows()) throw std::out_of_range("contrastive_loss: task outside embedding table");
  if (H.rows() != E.cols()) {
    throw ShapeError("contrastive_loss: sample dim " + std::to_string(H.rows()) +
                     " vs embedding dim " + std::to_string(E.cols()));
  }
  ag::Var sims = ag::cosine_similarity(embeddings, samples);  // T×N
  ag::Var probs = ag::softmax(sims, tau);
  std::vector<std::size_t> targets(H.cols(), task);
  ag::Var nll = ag::cross_entropy(probs, targets);
  return sign == ContrastiveSign::info_nce ? nll : ag::scale(nll, -1.0);
}

ag::Var generation_loss(ag::Var predicted, std::span<const std::size_t> targets) {
  const Tensor& P = predicted.value();
  for (std::size_t j = 0; j < P.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < P.rows(); ++i) {
      if (P(i, j) < 0.0) throw std::invalid_argument("generation_loss: negative probability");
      s += P(i, j);
    }
    if (std::abs(s - 1.0) > 1e-9) {
      throw std::invalid_argument("generation_loss: column " + std::to_string(j) +
                                  " does not sum to 1");
    }
  }
  return ag::cross_entropy(predicted, targets);
}

ag::Var total_loss(ag::Var gen, ag::Var con, double lambda) {
  if (lambda == 0.0) return gen;
  return ag::add(gen, ag::scale(con, lambda));
}

}  // namespace morekit
