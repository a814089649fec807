// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/embeddings_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace morekit {

std::vector<EmbeddingRow> collect_embeddings(const Backbone& model) {
  std::vector<EmbeddingRow> rows;
  for (const auto& site : model.sites()) {
    const MoreLayer* m = site.more();
    if (m == nullptr) continue;
    const Tensor& E = m->embeddings().value;
    for (std::size_t t = 0; t < E.rows(); ++t) {
      EmbeddingRow row{t, site.layer(), site_name(site.kind()), {}};
      for (std::size_t j = 0; j < E.cols(); ++j) row.values.push_back(E(t, j));
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string embeddings_csv(const Backbone& model) {
  const auto rows = collect_embeddings(model);
  if (rows.empty()) throw std::invalid_argument("export-embeddings: model has no MoRE layers");
  std::string out = "task_id,layer,site";
  for (std::size_t j = 0; j < rows.front().values.size(); ++j) out += ",e" + std::to_string(j);
  out += '\n';
  char buf[32];
  for (const auto& r : rows) {
    out += std::to_string(r.task) + ',' + std::to_string(r.layer) + ',' + r.site;
    for (double v : r.values) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void export_embeddings(const Backbone& model, const std::filesystem::path& path) {
  const std::string text = embeddings_csv(model);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<EmbeddingRow> parse_embeddings_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || !line.starts_with("task_id,layer,site")) {
    throw std::invalid_argument("embeddings csv: missing header");
  }
  std::vector<EmbeddingRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() < 4) {
      throw std::invalid_argument("embeddings csv line " + std::to_string(lineno) + ": too few columns");
    }
    try {
      EmbeddingRow row{std::stoul(cells[0]), std::stoul(cells[1]), cells[2], {}};
      for (std::size_t i = 3; i < cells.size(); ++i) row.values.push_back(std::stod(cells[i]));
      rows.push_back(std::move(row));
    } catch (const std::logic_error&) {
      throw std::invalid_argument("embeddings csv line " + std::to_string(lineno) + ": bad number");
    }
  }
  return rows;
}

std::vector<EmbeddingRow> import_embeddings(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_embeddings_csv(ss.str());
}

}  // namespace morekit
