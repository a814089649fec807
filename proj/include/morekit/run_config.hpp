// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration. Unknown keys are rejected; every error names the
// offending field with a dotted path ("tasks[2].intrinsic_rank").

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "morekit/backbone.hpp"
#include "morekit/synthetic_tasks.hpp"
#include "morekit/trainer.hpp"

namespace morekit {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Ablation {
  disable_linear_scaling,
  soft_selection,
  disable_ste,
  random_sample,
  literal_contrastive_sign,
  no_task_embeddings,
  no_contrastive,
};
const char* ablation_name(Ablation a);
Ablation parse_ablation(const std::string& s);

enum class InitPolicy { kaiming, copy_nearest };
const char* init_policy_name(InitPolicy p);
InitPolicy parse_init_policy(const std::string& s);

struct FewShotConfig {
  TaskSpec task;
  std::vector<std::size_t> shots{4, 16, 32};
  std::size_t seeds = 5;
  std::size_t steps = 100;
  double lr = 3e-3;
  InitPolicy init = InitPolicy::copy_nearest;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  BackboneConfig backbone;
  AdapterSettings adapter;  // num_tasks is filled from `tasks`
  OptimConfig optim;
  LossConfig loss;
  SamplingScheme sampling = SamplingScheme::balanced;
  std::vector<Ablation> ablations;
  SuiteConfig suite;
  std::vector<TaskSpec> tasks;
  std::size_t eval_every = 100;
  std::size_t log_every = 10;
  std::optional<FewShotConfig> fewshot;

  /// Throws ConfigError naming the field.
  void validate() const;
  /// Settings after ablation flags have been applied.
  AdapterSettings effective_adapter() const;
  LossConfig effective_loss() const;
  SamplingScheme effective_sampling() const;
  TrainOptions train_options() const;
  SeedPlan seeds() const { return SeedPlan::from_run_seed(seed); }
  bool has(Ablation a) const;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const RunConfig& c);

/// Registry and model for a config, both derived from its seed.
TaskRegistry build_registry(const RunConfig& c);
Backbone build_model(const RunConfig& c);

}  // namespace morekit
