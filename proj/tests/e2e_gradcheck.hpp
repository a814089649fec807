// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end finite-difference check of a 2-layer, width-16 MoRE model on
// the full training loss (generation + contrastive).
//
// Argmax routing is piecewise constant in the gate parameters, so the
// surrogate gradient it sends to W_g, b_g and E has no finite-difference
// counterpart. Each variant checks the parameters whose gradient is exact:
//   ste (default)   A, B
//   no ste          A, B, E   (E only through the contrastive term)
//   soft selection  A, B, E, W_g, b_g

#pragma once

#include <string>
#include <vector>

#include "morekit/backbone.hpp"
#include "morekit/trainer.hpp"
#include "test_util.hpp"

namespace morekit::testing {

enum class GateVariant { ste, no_ste, soft };

inline const char* gate_variant_name(GateVariant v) {
  switch (v) {
    case GateVariant::ste: return "ste";
    case GateVariant::no_ste: return "no_ste";
    case GateVariant::soft: return "soft";
  }
  return "?";
}

inline GradReport end_to_end_gradcheck(std::uint64_t seed, GateVariant variant,
                                       std::size_t coords_per_param = 2) {
  BackboneConfig cfg;
  cfg.num_layers = 2;
  cfg.width = 16;
  cfg.ffn_width = 16;
  cfg.num_heads = 2;
  cfg.vocab_size = 24;
  cfg.max_seq_len = 4;

  AdapterSettings ad;
  ad.mode = AdapterMode::more;
  ad.rank = 4;
  ad.num_tasks = 3;
  ad.more.gate_init_std = 0.5;
  ad.more.ste = variant != GateVariant::no_ste;
  ad.more.soft_selection = variant == GateVariant::soft;
  Backbone model = Backbone::build(cfg, ad, derive_seed(seed, "backbone"), derive_seed(seed, "adapter"));

  Rng rng(derive_seed(seed, "fd"));
  // B starts at zero; give it mass so every path carries signal.
  for (MoreLayer* m : model.more_layers()) {
    m->adapter().b().value = gaussian_tensor(m->adapter().b().value.shape(), 0.3, rng);
  }

  std::uniform_int_distribution<std::size_t> tok(0, cfg.vocab_size - 1), lab(0, 3);
  const std::size_t task = seed % ad.num_tasks;
  std::vector<Example> examples(2);
  for (auto& ex : examples) {
    ex.tokens.resize(cfg.max_seq_len);
    for (auto& t : ex.tokens) t = tok(rng);
    ex.label = lab(rng);
    ex.task = task;
  }
  Batch batch{task, {&examples[0], &examples[1]}};
  LossConfig loss;

  std::vector<ag::Parameter*> params;
  for (MoreLayer* m : model.more_layers()) {
    params.push_back(&m->adapter().a());
    params.push_back(&m->adapter().b());
    if (variant != GateVariant::ste) params.push_back(&m->embeddings());
    if (variant == GateVariant::soft) {
      params.push_back(&m->gate_weight());
      params.push_back(&m->gate_bias());
    }
  }
  auto fn = [&](ag::Graph& g) { return batch_loss(g, model, batch, loss).total; };
  return check_gradients(fn, params, 1e-5, coords_per_param, &rng);
}

}  // namespace morekit::testing
