// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0
//
// CSV export of the per-site task-embedding tables:
//   task_id,layer,site,e0,...,e{h-1}
// Values are written with 17 significant digits so a re-import is bit-exact.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "morekit/backbone.hpp"
#include "morekit/errors.hpp"

namespace morekit {

struct EmbeddingRow {
  std::size_t task = 0;
  std::size_t layer = 0;
  std::string site;
  std::vector<double> values;
};

std::vector<EmbeddingRow> collect_embeddings(const Backbone& model);
std::string embeddings_csv(const Backbone& model);
/// Throws std::invalid_argument if the model has no MoRE layers, IoError on write failure.
void export_embeddings(const Backbone& model, const std::filesystem::path& path);
/// Throws IoError on read failure, std::invalid_argument on malformed rows.
std::vector<EmbeddingRow> import_embeddings(const std::filesystem::path& path);
std::vector<EmbeddingRow> parse_embeddings_csv(const std::string& text);

}  // namespace morekit
