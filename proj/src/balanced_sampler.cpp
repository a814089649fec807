// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/balanced_sampler.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace morekit {

std::vector<double> compute_weights(std::span<const std::size_t> sizes, SamplingScheme scheme) {
  if (sizes.empty()) throw std::invalid_argument("compute_weights: empty registry");
  double total = 0.0;
  for (std::size_t s : sizes) {
    if (s == 0) throw std::invalid_argument("compute_weights: dataset sizes must be >= 1");
    total += static_cast<double>(s);
  }
  std::vector<double> w(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double frac = static_cast<double>(sizes[i]) / total;
    switch (scheme) {
      case SamplingScheme::balanced: w[i] = std::exp(frac); break;
      case SamplingScheme::proportional: w[i] = frac; break;
      case SamplingScheme::inverse_size: w[i] = 1.0 / static_cast<double>(sizes[i]); break;
    }
  }
  const double z = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= z;
  return w;
}

std::size_t TaskRegistry::add(std::string name, TaskDataset data) {
  const std::size_t id = tasks_.size();
  tasks_.push_back(TaskEntry{id, std::move(name), std::move(data)});
  recompute();
  return id;
}

void TaskRegistry::remove_last() {
  if (tasks_.empty()) throw std::logic_error("registry: nothing to remove");
  tasks_.pop_back();
  if (!tasks_.empty()) recompute();
  else weights_.clear();
}

void TaskRegistry::set_scheme(SamplingScheme s) {
  scheme_ = s;
  if (!tasks_.empty()) recompute();
}

void TaskRegistry::recompute() {
  std::vector<std::size_t> sizes;
  sizes.reserve(tasks_.size());
  for (const auto& t : tasks_) {
    if (t.size() == 0) throw std::invalid_argument("registry: task '" + t.name + "' has no data");
    sizes.push_back(t.size());
  }
  weights_ = compute_weights(sizes, scheme_);
}

BalancedSampler::BalancedSampler(const TaskRegistry& registry, std::uint64_t seed,
                                 std::vector<double> task_weights)
    : registry_(registry), rng_(seed), override_(std::move(task_weights)) {
  if (override_.empty()) return;
  if (override_.size() != registry_.size()) {
    throw std::invalid_argument("sampler: one weight per task expected");
  }
  double total = 0.0;
  for (double w : override_) {
    if (!(w >= 0.0)) throw std::invalid_argument("sampler: weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("sampler: weights sum to zero");
}

Batch BalancedSampler::next_batch(std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("sampler: batch_size must be >= 1");
  if (registry_.empty()) throw std::logic_error("sampler: empty registry");
  const auto& w = override_.empty() ? registry_.weights() : override_;
  std::discrete_distribution<std::size_t> pick_task(w.begin(), w.end());
  Batch b;
  b.task = pick_task(rng_);
  const auto& train = registry_.task(b.task).data.train;
  if (train.empty()) throw std::logic_error("sampler: empty dataset");
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  b.examples.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) b.examples.push_back(&train[pick(rng_)]);
  return b;
}

std::string BalancedSampler::rng_state() const {
  std::ostringstream os;
  os << rng_;
  return os.str();
}

void BalancedSampler::set_rng_state(const std::string& state) {
  std::istringstream is(state);
  is >> rng_;
  if (!is) throw std::invalid_argument("sampler: malformed RNG state");
}

}  // namespace morekit
