// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "morekit/autograd.hpp"

namespace morekit {

/// Linear warm-up to `peak` over the first warmup_steps, then linear decay to 0.
struct LinearSchedule {
  double peak = 3e-4;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;

  double at(std::size_t step) const;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay over a fixed parameter list.
class AdamW {
 public:
  AdamW(std::vector<ag::Parameter*> params, AdamWConfig cfg = {});

  /// Applies one update with learning rate `lr` and zeroes the gradients.
  void step(double lr);
  void zero_grad();
  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<ag::Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamWConfig cfg_;
  std::size_t t_ = 0;
};

}  // namespace morekit
