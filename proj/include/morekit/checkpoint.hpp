// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint = directory with manifest.json and weights.bin. The manifest
// lists every named parameter (shape, dtype "f64le", byte offset, size,
// trainable flag), the config snapshot, the sampler RNG state and the MoRE
// rank modes; weights.bin is the concatenation of all parameters as
// little-endian float64. Both files are fingerprinted in the manifest.

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "morekit/backbone.hpp"
#include "morekit/errors.hpp"
#include "morekit/run_config.hpp"

namespace morekit {

/// Corrupt checkpoint or checkpoint/model mismatch.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kWeightsFile = "weights.bin";

void save_checkpoint(const std::filesystem::path& dir, const Backbone& model,
                     const RunConfig& config, const std::string& sampler_state);

struct LoadedCheckpoint {
  RunConfig config;
  Backbone model;
  std::string sampler_state;
};

/// Rebuilds the model from the stored config, then restores every parameter
/// bit-exactly. Throws CheckpointError on hash, name or shape mismatch and
/// IoError when files cannot be read.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

/// Copies stored parameter values into `model` (names and shapes must match).
void restore_parameters(Backbone& model, const nlohmann::json& manifest, std::string_view blob);

}  // namespace morekit
