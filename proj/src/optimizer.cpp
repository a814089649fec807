// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace morekit {

double LinearSchedule::at(std::size_t step) const {
  if (warmup_steps > 0 && step < warmup_steps) {
    return peak * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  const std::size_t decay = total_steps > warmup_steps ? total_steps - warmup_steps : 1;
  const double done = static_cast<double>(step - std::min(step, warmup_steps));
  return peak * std::max(0.0, 1.0 - done / static_cast<double>(decay));
}

AdamW::AdamW(std::vector<ag::Parameter*> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape(), 0.0);
    v_.emplace_back(p->value.shape(), 0.0);
    p->zero_grad();
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ag::Parameter& p = *params_[i];
    if (!p.trainable) continue;
    auto w = p.value.data();
    auto g = p.grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[j]);
    }
  }
  zero_grad();
}

void AdamW::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

}  // namespace morekit
