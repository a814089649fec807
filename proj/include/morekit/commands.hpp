// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0
//
// Subcommands of the more_kit tool. Each is callable in-process; run_cli()
// parses arguments and maps exceptions to exit codes.

#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "morekit/backbone.hpp"
#include "morekit/param_audit.hpp"
#include "morekit/run_config.hpp"
#include "morekit/trainer.hpp"

namespace morekit {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitNumerical = 3,
  kExitIo = 4,
};

inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kAllocationFile = "allocation.json";
inline constexpr const char* kEmbeddingsFile = "embeddings.csv";
inline constexpr const char* kCheckpointDir = "checkpoint";

nlohmann::ordered_json audit_json(const AuditReport& r);
nlohmann::ordered_json allocation_json(const Backbone& model, const std::vector<std::string>& task_names);
nlohmann::ordered_json eval_json(const std::vector<std::string>& task_names,
                                 const std::vector<double>& accuracy);

struct TrainOutcome {
  RunMetrics metrics;
  std::filesystem::path out_dir;
};

/// Trains per `config` and writes metrics.jsonl, checkpoint/, and for MoRE
/// models allocation.json and embeddings.csv into `out_dir`.
TrainOutcome run_training(const RunConfig& config, const std::filesystem::path& out_dir);

/// Evaluates a loaded checkpoint on its regenerated task suite.
std::vector<double> evaluate_checkpoint(const std::filesystem::path& checkpoint);

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace morekit
