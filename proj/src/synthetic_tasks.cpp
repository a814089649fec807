// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/synthetic_tasks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "morekit/ops.hpp"

namespace morekit {

SeedPlan SeedPlan::from_run_seed(std::uint64_t seed) {
  const std::uint64_t data = derive_seed(seed, "data");
  return SeedPlan{derive_seed(data, "backbone"), derive_seed(seed, "init"),
                  derive_seed(seed, "sampling"), data};
}

namespace {

// n×k matrix with orthonormal columns (Gram-Schmidt on Gaussian draws).
Tensor orthonormal_columns(std::size_t n, std::size_t k, Rng& rng) {
  if (k > n) throw std::invalid_argument("orthonormal_columns: k > n");
  Tensor q = gaussian_tensor({n, k}, 1.0, rng);
  for (std::size_t j = 0; j < k; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t p = 0; p < j; ++p) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += q(i, j) * q(i, p);
        for (std::size_t i = 0; i < n; ++i) q(i, j) -= dot * q(i, p);
      }
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += q(i, j) * q(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericalError("orthonormal_columns: degenerate draw");
    for (std::size_t i = 0; i < n; ++i) q(i, j) /= norm;
  }
  return q;
}

Tensor low_rank_product(const Tensor& u, const Tensor& v, std::size_t rank, double sigma) {
  const std::size_t m = u.rows(), d = v.rows();
  Tensor out({m, d}, 0.0);
  for (std::size_t p = 0; p < rank; ++p)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j) out(i, j) += sigma * u(i, p) * v(j, p);
  return out;
}

}  // namespace

Tensor planted_update(std::size_t m, std::size_t d, std::size_t rank, double singular_value,
                      Rng& rng) {
  if (rank == 0) return Tensor({m, d}, 0.0);
  Tensor u = orthonormal_columns(m, rank, rng);
  Tensor v = orthonormal_columns(d, rank, rng);
  return low_rank_product(u, v, rank, singular_value);
}

Tensor nested_update(std::size_t m, std::size_t d, std::size_t rank, std::size_t pool_size,
                     double singular_value, Rng& pool_rng) {
  if (rank > pool_size) throw std::invalid_argument("nested_update: rank exceeds pool");
  if (rank == 0) return Tensor({m, d}, 0.0);
  Tensor u = orthonormal_columns(m, pool_size, pool_rng);
  Tensor v = orthonormal_columns(d, pool_size, pool_rng);
  return low_rank_product(u, v, rank, singular_value);
}

Backbone build_teacher(const BackboneConfig& cfg, const SuiteConfig& suite, const TaskSpec& spec,
                       std::size_t max_rank, const SeedPlan& seeds) {
  if (spec.intrinsic_rank > max_rank) {
    throw std::invalid_argument("task '" + spec.name + "': intrinsic_rank " +
                                std::to_string(spec.intrinsic_rank) + " exceeds model rank " +
                                std::to_string(max_rank));
  }
  AdapterSettings none;
  Backbone teacher = Backbone::build(cfg, none, seeds.backbone, 0);
  for (std::size_t i = 0; i < teacher.sites().size(); ++i) {
    AdaptedSite& site = teacher.sites()[i];
    if (std::find(suite.perturbed_sites.begin(), suite.perturbed_sites.end(), site.kind()) ==
        suite.perturbed_sites.end()) {
      continue;
    }
    const Tensor& w = site.base_weight();
    Tensor delta;
    if (suite.basis == PerturbationBasis::shared) {
      Rng pool(derive_seed(seeds.data, "pool", i));
      delta = nested_update(w.rows(), w.cols(), spec.intrinsic_rank, max_rank,
                            suite.perturbation_scale, pool);
    } else {
      Rng rng(derive_seed(derive_seed(seeds.data, "teacher", spec.teacher_seed), site.name()));
      delta = planted_update(w.rows(), w.cols(), spec.intrinsic_rank, suite.perturbation_scale,
                             rng);
    }
    site.perturb_base(delta);
  }
  return teacher;
}

std::vector<std::size_t> predict_labels(Backbone& model, std::size_t task,
                                        const std::vector<std::vector<std::size_t>>& inputs,
                                        std::size_t label_tokens) {
  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> labels;
  labels.reserve(inputs.size());
  for (std::size_t start = 0; start < inputs.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, inputs.size() - start);
    ag::Graph g(false);
    auto out = model.forward(g, std::span(inputs).subspan(start, n), task);
    const Tensor& p = out.probs.value();
    const std::size_t S = out.seq_len;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t col = b * S + (S - 1);
      std::size_t best = 0;
      for (std::size_t t = 1; t < label_tokens; ++t)
        if (p(t, col) > p(best, col)) best = t;
      labels.push_back(best);
    }
  }
  return labels;
}

std::size_t prefix_token(const SuiteConfig& suite, std::size_t task) {
  return suite.label_tokens + task;
}

std::size_t first_content_token(const SuiteConfig& suite, std::size_t num_prefixes) {
  return suite.label_tokens + num_prefixes;
}

TaskDataset generate_task_data(const TaskSpec& spec, std::size_t task_index,
                               std::size_t num_prefixes, const SuiteConfig& suite,
                               const BackboneConfig& cfg, std::size_t max_rank,
                               const SeedPlan& seeds) {
  const std::size_t first = first_content_token(suite, num_prefixes);
  if (suite.label_tokens < 2) throw std::invalid_argument("suite.label_tokens: must be >= 2");
  if (first >= cfg.vocab_size) {
    throw std::invalid_argument("backbone.vocab_size: too small for labels, prefixes and content");
  }
  std::size_t lo = first, hi = cfg.vocab_size;
  if (spec.vocab) {
    std::tie(lo, hi) = *spec.vocab;
    if (lo < first || hi > cfg.vocab_size || lo >= hi) {
      throw std::invalid_argument("task '" + spec.name + "': vocab range must lie in [" +
                                  std::to_string(first) + ", " + std::to_string(cfg.vocab_size) +
                                  ")");
    }
  }
  if (spec.train_size == 0 || spec.heldout_size == 0) {
    throw std::invalid_argument("task '" + spec.name + "': train_size and heldout_size must be >= 1");
  }
  const std::size_t S = cfg.max_seq_len;
  if (S < 2) throw std::invalid_argument("backbone.max_seq_len: need >= 2 (prefix + content)");

  const std::size_t total = spec.train_size + spec.heldout_size;
  const double space = std::pow(static_cast<double>(hi - lo), static_cast<double>(S - 1));
  if (space < static_cast<double>(total)) {
    throw std::invalid_argument("task '" + spec.name + "': input space too small for dataset size");
  }

  Rng rng(derive_seed(seeds.data, "inputs:" + spec.name, spec.teacher_seed));
  std::uniform_int_distribution<std::size_t> content(lo, hi - 1);
  std::set<std::vector<std::size_t>> seen;
  std::vector<std::vector<std::size_t>> inputs;
  inputs.reserve(total);
  while (inputs.size() < total) {
    std::vector<std::size_t> seq(S);
    seq[0] = prefix_token(suite, task_index);
    for (std::size_t i = 1; i < S; ++i) seq[i] = content(rng);
    if (seen.insert(seq).second) inputs.push_back(std::move(seq));
  }

  Backbone teacher = build_teacher(cfg, suite, spec, max_rank, seeds);
  const auto labels = predict_labels(teacher, 0, inputs, suite.label_tokens);

  TaskDataset data;
  for (std::size_t i = 0; i < total; ++i) {
    Example ex{std::move(inputs[i]), labels[i], task_index};
    (i < spec.train_size ? data.train : data.heldout).push_back(std::move(ex));
  }
  return data;
}

TaskRegistry generate_tasks(const std::vector<TaskSpec>& specs, const SuiteConfig& suite,
                            const BackboneConfig& cfg, std::size_t max_rank,
                            const SeedPlan& seeds, SamplingScheme scheme,
                            std::size_t extra_prefixes) {
  if (specs.empty()) throw std::invalid_argument("tasks: at least one task is required");
  std::map<std::string, std::size_t> by_name;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!by_name.emplace(specs[i].name, i).second) {
      throw std::invalid_argument("tasks: duplicate task name '" + specs[i].name + "'");
    }
  }
  TaskRegistry reg(scheme);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const TaskSpec& spec = specs[i];
    TaskDataset data;
    if (spec.duplicate_of) {
      auto it = by_name.find(*spec.duplicate_of);
      if (it == by_name.end() || it->second >= i) {
        throw std::invalid_argument("task '" + spec.name + "': duplicate_of must name an earlier task");
      }
      data = reg.task(it->second).data;
      for (auto& ex : data.train) ex.task = i;
      for (auto& ex : data.heldout) ex.task = i;
    } else {
      data = generate_task_data(spec, i, specs.size() + extra_prefixes, suite, cfg, max_rank, seeds);
    }
    reg.add(spec.name, std::move(data));
  }
  return reg;
}

}  // namespace morekit
