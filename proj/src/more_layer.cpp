// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/more_layer.hpp"

#include <cmath>
#include <stdexcept>

#include "morekit/ops.hpp"

namespace morekit {

std::size_t argmax_rank(std::span<const double> p) {
  if (p.empty()) throw std::invalid_argument("argmax_rank: empty distribution");
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best + 1;
}

ag::Var ste_select(ag::Var p, std::size_t rank) {
  const std::size_t expected = argmax_rank(p.value().data());
  if (rank != expected) {
    throw std::invalid_argument("ste_select: rank " + std::to_string(rank) +
                                " is not 1 + argmax(p) = " + std::to_string(expected));
  }
  ag::Var hard = ag::one_hot_argmax(p);
  ag::Var ste = ag::add(p, ag::stop_gradient(ag::sub(hard, p)));
  return ag::index(ste, rank - 1);
}

MoreLayer::MoreLayer(LoraAdapter adapter, std::size_t num_tasks, std::size_t embed_dim,
                     std::uint64_t seed, MoreOptions options, std::size_t scaling_tasks)
    : adapter_(std::move(adapter)),
      num_tasks_(num_tasks),
      embed_dim_(embed_dim),
      scaling_tasks_(scaling_tasks == 0 ? num_tasks : scaling_tasks),
      options_(options) {
  if (num_tasks == 0) throw std::invalid_argument("more: need at least one task");
  if (embed_dim == 0) throw std::invalid_argument("more: embedding dimension must be >= 1");
  if (options_.gate_init_std < 0.0) throw std::invalid_argument("more: negative gate_init_std");
  const std::string& base = adapter_.a().name;
  const std::string prefix = base.substr(0, base.size() - 2);  // strip ".A"
  Rng rng(seed);
  const std::size_t r = adapter_.rank();
  // Kaiming normal for the embedding table: variance 2/h.
  embeddings_ = ag::Parameter(
      prefix + ".E",
      gaussian_tensor({num_tasks, embed_dim}, std::sqrt(2.0 / static_cast<double>(embed_dim)), rng),
      options_.task_embeddings);
  Tensor wg({r, embed_dim}, 0.0);
  if (options_.gate_init_std > 0.0) wg = gaussian_tensor({r, embed_dim}, options_.gate_init_std, rng);
  gate_w_ = ag::Parameter(prefix + ".Wg", std::move(wg), options_.task_embeddings);
  gate_b_ = ag::Parameter(prefix + ".bg", Tensor({r, 1}, 0.0));
  last_rank_.assign(num_tasks, 0);
  counts_.assign(num_tasks, std::vector<std::size_t>(r, 0));
}

void MoreLayer::check_task(std::size_t task) const {
  if (task >= num_tasks_) {
    throw std::out_of_range("more: unknown task " + std::to_string(task) + " (have " +
                            std::to_string(num_tasks_) + ")");
  }
}

double MoreLayer::rank_scale(std::size_t rank) const {
  double s = adapter_.alpha();
  if (options_.linear_scaling) s *= static_cast<double>(rank) / static_cast<double>(scaling_tasks_);
  return s;
}

MoreLayer::GateResult MoreLayer::gate_forward(ag::Graph& g, std::size_t task) {
  check_task(task);
  ag::Var logits;
  if (options_.task_embeddings) {
    ag::Var e = ag::transpose(ag::select_row(g.param(embeddings_), task));
    logits = ag::add(ag::matmul(g.param(gate_w_), e), g.param(gate_b_));
  } else {
    logits = g.param(gate_b_);
  }
  ag::Var p = ag::softmax(logits, 1.0);
  return {p, argmax_rank(p.value().data())};
}

Tensor MoreLayer::gate_probabilities(std::size_t task) const {
  ag::Graph g(false);
  // A non-tracking graph only reads parameter values.
  auto& self = const_cast<MoreLayer&>(*this);
  return self.gate_forward(g, task).probs.value();
}

std::size_t MoreLayer::current_rank(std::size_t task) const {
  check_task(task);
  if (mode_ == RankMode::frozen_mapping) return frozen_map_[task];
  return argmax_rank(gate_probabilities(task).data());
}

ag::Var MoreLayer::forward(ag::Graph& g, ag::Var x, std::size_t task) {
  check_task(task);
  ag::Var base = adapter_.base_forward(g, x);

  if (mode_ == RankMode::frozen_mapping) {
    const std::size_t rank = frozen_map_[task];
    ag::Var update = ag::scale(adapter_.prefix_update(g, x, rank), rank_scale(rank));
    return ag::add(base, update);
  }

  GateResult gate = gate_forward(g, task);
  last_rank_[task] = gate.rank;
  ++counts_[task][gate.rank - 1];
  ag::Var p = options_.ste ? gate.probs : ag::stop_gradient(gate.probs);

  if (options_.soft_selection) {
    // Σ_k p_k·s_k·B[:, :k]A[:k, :]x = B·diag(c)·A·x with c_j = Σ_{k>j} p_k·s_k.
    const std::size_t r = adapter_.rank();
    Tensor mix({r, r}, 0.0);
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t k = j; k < r; ++k) mix(j, k) = rank_scale(k + 1);
    ag::Var c = ag::matmul(g.constant(std::move(mix)), p);
    ag::Var ax = ag::matmul(g.param(adapter_.a()), x);
    ag::Var update = ag::matmul(g.param(adapter_.b()), ag::mul_rows(ax, c));
    return ag::add(base, update);
  }

  ag::Var update = ag::scale(adapter_.prefix_update(g, x, gate.rank), rank_scale(gate.rank));
  if (options_.ste) update = ag::scale_by(update, ste_select(p, gate.rank));
  return ag::add(base, update);
}

void MoreLayer::freeze_mapping() {
  if (mode_ == RankMode::frozen_mapping) return;
  if (options_.soft_selection) {
    throw std::logic_error("more: soft selection has no single expert per task to freeze");
  }
  std::vector<std::size_t> mapping(num_tasks_);
  for (std::size_t t = 0; t < num_tasks_; ++t) mapping[t] = current_rank(t);
  set_frozen_mapping(std::move(mapping));
}

void MoreLayer::set_frozen_mapping(std::vector<std::size_t> mapping) {
  if (mapping.size() != num_tasks_) throw std::invalid_argument("more: mapping size mismatch");
  for (std::size_t r : mapping) {
    if (r < 1 || r > adapter_.rank()) throw std::invalid_argument("more: mapped rank out of range");
  }
  frozen_map_ = std::move(mapping);
  mode_ = RankMode::frozen_mapping;
  embeddings_.trainable = false;
  gate_w_.trainable = false;
  gate_b_.trainable = false;
}

void MoreLayer::add_task(std::optional<Tensor> row, Rng& rng) {
  if (mode_ != RankMode::train_gated) throw std::logic_error("more: cannot add tasks when frozen");
  const Tensor& E = embeddings_.value;
  Tensor new_row = row ? std::move(*row)
                       : gaussian_tensor({1, embed_dim_},
                                         std::sqrt(2.0 / static_cast<double>(embed_dim_)), rng);
  if (new_row.size() != embed_dim_) throw std::invalid_argument("more: embedding row size mismatch");
  std::vector<double> data(E.data().begin(), E.data().end());
  data.insert(data.end(), new_row.data().begin(), new_row.data().end());
  embeddings_.value = Tensor({num_tasks_ + 1, embed_dim_}, std::move(data));
  embeddings_.zero_grad();
  ++num_tasks_;
  last_rank_.push_back(0);
  counts_.emplace_back(adapter_.rank(), 0);
}

std::vector<double> AllocationHistogram::mean_rank() const {
  std::vector<double> out(num_tasks, 0.0);
  for (std::size_t t = 0; t < num_tasks; ++t) {
    double n = 0.0, s = 0.0;
    for (std::size_t k = 0; k < max_rank; ++k) {
      n += static_cast<double>(counts[t][k]);
      s += static_cast<double>(counts[t][k]) * static_cast<double>(k + 1);
    }
    out[t] = n > 0.0 ? s / n : 0.0;
  }
  return out;
}

AllocationHistogram allocation_histogram(std::span<const MoreLayer* const> layers) {
  AllocationHistogram h;
  if (layers.empty()) return h;
  h.num_tasks = layers.front()->num_tasks();
  for (const MoreLayer* l : layers) h.max_rank = std::max(h.max_rank, l->max_rank());
  h.counts.assign(h.num_tasks, std::vector<std::size_t>(h.max_rank, 0));
  for (const MoreLayer* l : layers) {
    if (l->num_tasks() != h.num_tasks) throw std::invalid_argument("histogram: task count mismatch");
    for (std::size_t t = 0; t < h.num_tasks; ++t) ++h.counts[t][l->current_rank(t) - 1];
  }
  return h;
}

}  // namespace morekit
