// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/lora_adapter.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "morekit/ops.hpp"
#include "morekit/rng.hpp"

namespace morekit {

LoraAdapter LoraAdapter::init(std::size_t m, std::size_t d, std::size_t r, std::uint64_t seed,
                              std::optional<Tensor> base, double alpha, const std::string& name) {
  if (m == 0 || d == 0 || r == 0) throw std::invalid_argument("lora: dimensions must be >= 1");
  if (r > std::min(m, d)) {
    throw std::invalid_argument("lora: rank " + std::to_string(r) + " exceeds min(m, d) = " +
                                std::to_string(std::min(m, d)));
  }
  if (!(alpha > 0.0)) throw std::invalid_argument("lora: alpha must be positive");

  Rng rng(seed);
  LoraAdapter ad;
  if (base) {
    if (base->rows() != m || base->cols() != d) {
      throw std::invalid_argument("lora: base weight shape " + to_string(base->shape()) +
                                  " does not match " + std::to_string(m) + "x" + std::to_string(d));
    }
    ad.w0_ = ag::Parameter(name + ".W0", std::move(*base), false);
  } else {
    ad.w0_ = ag::Parameter(name + ".W0",
                           gaussian_tensor({m, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng),
                           false);
  }
  ad.a_ = ag::Parameter(name + ".A",
                        gaussian_tensor({r, d}, 1.0 / std::sqrt(static_cast<double>(r)), rng));
  ad.b_ = ag::Parameter(name + ".B", Tensor({m, r}, 0.0));
  ad.rank_ = r;
  ad.alpha_ = alpha;
  return ad;
}

ag::Var LoraAdapter::base_forward(ag::Graph& g, ag::Var x) {
  if (x.value().rows() != in_dim()) {
    throw ShapeError("lora: input has " + std::to_string(x.value().rows()) + " rows, expected " +
                     std::to_string(in_dim()));
  }
  return ag::matmul(g.param(w0_), x);
}

ag::Var LoraAdapter::prefix_update(ag::Graph& g, ag::Var x, std::size_t k) {
  ag::Var a = g.param(a_);
  ag::Var b = g.param(b_);
  if (k != rank_) {
    a = ag::slice_rows(a, k);
    b = ag::slice_cols(b, k);
  }
  return ag::matmul(b, ag::matmul(a, x));
}

ag::Var LoraAdapter::forward(ag::Graph& g, ag::Var x) {
  ag::Var base = base_forward(g, x);
  ag::Var update = prefix_update(g, x, rank_);
  if (alpha_ != 1.0) update = ag::scale(update, alpha_);
  return ag::add(base, update);
}

Tensor LoraAdapter::merged_weight() const {
  Tensor ba = dense_matmul(b_.value, a_.value);
  Tensor w = w0_.value;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] += alpha_ * ba[i];
  return w;
}

}  // namespace morekit
