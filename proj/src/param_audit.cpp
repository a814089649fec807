// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/param_audit.hpp"

#include <stdexcept>

namespace morekit {

const char* budget_method_name(BudgetMethod m) {
  switch (m) {
    case BudgetMethod::lora: return "lora";
    case BudgetMethod::multilora: return "multilora";
    case BudgetMethod::mixlora: return "mixlora";
    case BudgetMethod::moelora: return "moelora";
    case BudgetMethod::more: return "more";
  }
  return "?";
}

std::uint64_t budget(BudgetMethod method, const BudgetInputs& in) {
  if (in.layers == 0 || in.rank == 0 || in.m == 0 || in.d == 0 || in.tasks == 0 ||
      in.embed_dim == 0) {
    throw std::invalid_argument("budget: all dimensions must be >= 1");
  }
  const std::uint64_t L = in.layers, r = in.rank, m = in.m, d = in.d, T = in.tasks,
                      h = in.embed_dim;
  auto need_n = [&]() {
    if (!in.parallel || *in.parallel == 0) {
      throw std::invalid_argument(std::string("budget: ") + budget_method_name(method) +
                                  " requires the number of parallel modules n");
    }
    return *in.parallel;
  };
  switch (method) {
    case BudgetMethod::lora: return 6 * L * r * (m + d);
    case BudgetMethod::multilora: {
      const auto n = need_n();
      return 6 * n * L * r * (m + d) + 6 * L * d;
    }
    case BudgetMethod::mixlora: {
      const auto n = need_n();
      return 2 * n * L * r * (m + d) + 2 * L * n * m;
    }
    case BudgetMethod::moelora: {
      const auto n = need_n();
      return 6 * L * r * (m + d) + 6 * L * h * (n + T);
    }
    case BudgetMethod::more: return 6 * L * r * (m + d) + 6 * L * h * (r + T);
  }
  throw std::invalid_argument("budget: unknown method");
}

AuditReport audit(const Backbone& backbone) {
  const auto& cfg = backbone.config();
  const auto& ad = backbone.adapter_settings();
  AuditReport rep;
  rep.mode = adapter_mode_name(ad.mode);
  rep.inputs.layers = cfg.num_layers;
  rep.inputs.rank = ad.mode == AdapterMode::none ? 1 : ad.rank;
  rep.inputs.m = cfg.width;
  rep.inputs.d = cfg.width;
  rep.inputs.tasks = std::max<std::size_t>(1, backbone.num_tasks());
  rep.inputs.embed_dim = ad.embed_dim == 0 ? cfg.width : ad.embed_dim;
  rep.live_trainable = backbone.trainable_count();

  rep.budgets.emplace_back("lora", budget(BudgetMethod::lora, rep.inputs));
  rep.budgets.emplace_back("more", budget(BudgetMethod::more, rep.inputs));

  std::uint64_t lora_part = 0;
  for (const auto& site : backbone.sites()) {
    SiteAudit sa;
    sa.site = site.name();
    const Tensor& w0 = site.base_weight();
    const LoraAdapter* l = site.lora();
    const MoreLayer* m = site.more();
    if (m != nullptr) l = &m->adapter();
    if (l == nullptr) continue;
    sa.live_lora = l->a().size() + l->b().size();
    sa.expected_lora = l->rank() * (w0.rows() + w0.cols());
    if (m != nullptr) {
      if (m->has_embeddings()) {
        sa.live_routing = m->embeddings().size() + m->gate_weight().size();
      }
      sa.expected_routing = m->embed_dim() * (m->max_rank() + m->num_tasks());
      sa.gate_bias = m->gate_bias().size();
    }
    lora_part += sa.live_lora;
    rep.live_counted += sa.live_lora + sa.live_routing;
    rep.gate_bias_unaccounted += sa.gate_bias;
    if (!sa.matches()) rep.mismatches.push_back(sa.site);
    rep.sites.push_back(std::move(sa));
  }

  switch (ad.mode) {
    case AdapterMode::none: rep.expected = 0; break;
    case AdapterMode::lora_fixed: rep.expected = budget(BudgetMethod::lora, rep.inputs); break;
    case AdapterMode::more: rep.expected = budget(BudgetMethod::more, rep.inputs); break;
  }
  bool frozen = ad.mode == AdapterMode::more;
  for (const MoreLayer* m : backbone.more_layers()) frozen = frozen && m->mode() == RankMode::frozen_mapping;
  // A frozen task -> rank lookup makes the embeddings and gates skippable.
  rep.effective_inference = frozen ? lora_part : rep.live_counted + rep.gate_bias_unaccounted;
  if (rep.live_counted != rep.expected && rep.mismatches.empty()) {
    rep.mismatches.push_back("total");
  }
  return rep;
}

}  // namespace morekit
