// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0
//
// Closed-form trainable-parameter budgets of LoRA-style multi-task methods,
// and an audit of a built backbone against them.
//
//   lora       6·L·r·(m+d)
//   multilora  6·n·L·r·(m+d) + 6·L·d
//   mixlora    2·n·L·r·(m+d) + 2·L·n·m
//   moelora    6·L·r·(m+d) + 6·L·h·(n+T)
//   more       6·L·r·(m+d) + 6·L·h·(r+T)

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "morekit/backbone.hpp"

namespace morekit {

enum class BudgetMethod { lora, multilora, mixlora, moelora, more };
const char* budget_method_name(BudgetMethod m);

struct BudgetInputs {
  std::uint64_t layers = 1;  // L
  std::uint64_t rank = 1;    // r
  std::uint64_t m = 1;
  std::uint64_t d = 1;
  std::optional<std::uint64_t> parallel;  // n
  std::uint64_t tasks = 1;                // T
  std::uint64_t embed_dim = 1;            // h
};

/// Throws std::invalid_argument when a dimension is zero or n is missing for
/// a method that needs it.
std::uint64_t budget(BudgetMethod method, const BudgetInputs& in);

struct SiteAudit {
  std::string site;
  std::uint64_t live_lora = 0;       // A + B
  std::uint64_t expected_lora = 0;   // r(m+d)
  std::uint64_t live_routing = 0;    // E + W_g
  std::uint64_t expected_routing = 0;  // h(r+T)
  std::uint64_t gate_bias = 0;       // b_g, outside the closed form
  bool matches() const { return live_lora == expected_lora && live_routing == expected_routing; }
};

struct AuditReport {
  std::string mode;
  BudgetInputs inputs;
  std::uint64_t live_trainable = 0;
  /// Live count excluding gate biases, compared against the closed form.
  std::uint64_t live_counted = 0;
  std::uint64_t expected = 0;
  std::uint64_t gate_bias_unaccounted = 0;
  /// Parameters still needed once the task → rank mapping is frozen.
  std::uint64_t effective_inference = 0;
  std::vector<std::pair<std::string, std::uint64_t>> budgets;
  std::vector<SiteAudit> sites;
  std::vector<std::string> mismatches;

  bool exact() const { return mismatches.empty() && live_counted == expected; }
  std::string status() const { return exact() ? "exact" : "mismatch"; }
};

AuditReport audit(const Backbone& backbone);

}  // namespace morekit
