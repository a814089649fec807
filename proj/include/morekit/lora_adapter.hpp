// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "morekit/autograd.hpp"

namespace morekit {

/// Frozen m×d base weight with a trainable low-rank update B·A.
///   forward(x) = W0·x + alpha·B·A·x   for x of shape d×n.
class LoraAdapter {
 public:
  /// A ~ N(0, 1/r), B = 0. W0 is taken from `base` when given, otherwise
  /// drawn N(0, 1/d). Throws std::invalid_argument on bad dimensions.
  static LoraAdapter init(std::size_t m, std::size_t d, std::size_t r, std::uint64_t seed,
                          std::optional<Tensor> base = std::nullopt, double alpha = 1.0,
                          const std::string& name = "lora");

  ag::Var forward(ag::Graph& g, ag::Var x);
  /// W0·x only.
  ag::Var base_forward(ag::Graph& g, ag::Var x);
  /// Low-rank branch restricted to the first `k` ranks: B[:, :k]·A[:k, :]·x,
  /// without the alpha multiplier.
  ag::Var prefix_update(ag::Graph& g, ag::Var x, std::size_t k);

  /// W0 + alpha·B·A. Used for the fixed-rank baseline only.
  Tensor merged_weight() const;

  std::size_t out_dim() const { return w0_.value.rows(); }
  std::size_t in_dim() const { return w0_.value.cols(); }
  std::size_t rank() const { return rank_; }
  double alpha() const { return alpha_; }
  std::size_t trainable_size() const { return a_.size() + b_.size(); }

  ag::Parameter& w0() { return w0_; }
  ag::Parameter& a() { return a_; }
  ag::Parameter& b() { return b_; }
  const ag::Parameter& w0() const { return w0_; }
  const ag::Parameter& a() const { return a_; }
  const ag::Parameter& b() const { return b_; }

 private:
  ag::Parameter w0_;
  ag::Parameter a_;
  ag::Parameter b_;
  std::size_t rank_ = 0;
  double alpha_ = 1.0;
};

}  // namespace morekit
