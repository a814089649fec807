// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "morekit/hash.hpp"

namespace morekit {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void append_f64le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double read_f64le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::string fingerprint(std::string_view bytes) {
  Fnv1a h;
  h.update(bytes);
  return h.hex();
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, std::string_view bytes) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open '" + p.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + p.string() + "'");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Backbone& model,
                     const RunConfig& config, const std::string& sampler_state) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  std::string blob;
  ordered_json params = ordered_json::array();
  for (const ag::Parameter* p : model.parameters()) {
    const std::size_t offset = blob.size();
    for (double v : p->value.data()) append_f64le(blob, v);
    params.push_back({{"name", p->name},
                      {"shape", p->value.shape()},
                      {"dtype", "f64le"},
                      {"offset", offset},
                      {"nbytes", blob.size() - offset},
                      {"trainable", p->trainable}});
  }
  ordered_json sites = ordered_json::array();
  for (const auto& s : model.sites()) {
    const MoreLayer* m = s.more();
    if (m == nullptr) continue;
    ordered_json e{{"site", s.name()},
                   {"mode", m->mode() == RankMode::frozen_mapping ? "frozen_mapping" : "train_gated"},
                   {"num_tasks", m->num_tasks()},
                   {"scaling_tasks", m->scaling_tasks()}};
    if (m->mode() == RankMode::frozen_mapping) e["frozen_map"] = m->frozen_map();
    sites.push_back(std::move(e));
  }

  ordered_json manifest;
  manifest["format"] = "morekit-checkpoint";
  manifest["version"] = 1;
  manifest["adapter_mode"] = adapter_mode_name(model.mode());
  manifest["num_tasks"] = model.num_tasks();
  manifest["config"] = to_json(config);
  manifest["config"].erase("output_dir");
  manifest["sampler_rng_state"] = sampler_state;
  manifest["more_sites"] = std::move(sites);
  manifest["params"] = std::move(params);
  manifest["blob"] = kWeightsFile;
  manifest["blob_bytes"] = blob.size();
  manifest["blob_fnv1a"] = fingerprint(blob);
  manifest["manifest_fnv1a"] = fingerprint(manifest.dump());

  write_file(dir / kWeightsFile, blob);
  write_file(dir / kManifestFile, manifest.dump(2) + "\n");
}

void restore_parameters(Backbone& model, const json& manifest, std::string_view blob) {
  std::map<std::string, ag::Parameter*> by_name;
  for (ag::Parameter* p : model.parameters()) by_name[p->name] = p;
  const json& params = manifest.at("params");
  if (params.size() != by_name.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(params.size()) +
                          " parameters, model has " + std::to_string(by_name.size()));
  }
  for (const json& e : params) {
    const std::string name = e.at("name");
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint parameter '" + name + "' not in model");
    ag::Parameter& p = *it->second;
    const Shape shape = e.at("shape").get<Shape>();
    if (shape != p.value.shape()) throw CheckpointError("shape mismatch for '" + name + "'");
    if (e.at("dtype") != "f64le") throw CheckpointError("unsupported dtype for '" + name + "'");
    const std::size_t offset = e.at("offset"), nbytes = e.at("nbytes");
    if (nbytes != p.value.size() * 8 || offset + nbytes > blob.size()) {
      throw CheckpointError("byte range out of bounds for '" + name + "'");
    }
    auto data = p.value.data();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = read_f64le(blob.data() + offset + 8 * i);
    p.trainable = e.at("trainable").get<bool>();
    p.zero_grad();
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  const std::string text = read_file(dir / kManifestFile);
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(text);
  } catch (const json::parse_error& e) {
    throw CheckpointError("manifest is not valid JSON: " + std::string(e.what()));
  }
  if (!manifest.is_object() || manifest.value("format", "") != "morekit-checkpoint" ||
      !manifest.contains("manifest_fnv1a")) {
    throw CheckpointError("not a morekit checkpoint: " + dir.string());
  }
  const std::string stored = manifest["manifest_fnv1a"];
  manifest.erase("manifest_fnv1a");
  if (fingerprint(manifest.dump()) != stored) throw CheckpointError("manifest hash mismatch (corrupt)");

  const std::string blob = read_file(dir / manifest.at("blob").get<std::string>());
  if (blob.size() != manifest.at("blob_bytes").get<std::size_t>() ||
      fingerprint(blob) != manifest.at("blob_fnv1a").get<std::string>()) {
    throw CheckpointError("weights blob hash mismatch (corrupt)");
  }

  RunConfig config;
  try {
    config = parse_run_config(manifest.at("config"));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("stored config invalid: ") + e.what());
  }
  Backbone model = build_model(config);
  const std::size_t tasks = manifest.at("num_tasks");
  if (tasks < model.num_tasks()) throw CheckpointError("checkpoint task count below config task count");
  Rng unused(0);
  while (model.num_tasks() < tasks) model.add_task({}, unused);

  restore_parameters(model, manifest, blob);

  std::map<std::string, MoreLayer*> more_by_site;
  for (auto& s : model.sites())
    if (MoreLayer* m = s.more()) more_by_site[s.name()] = m;
  for (const auto& e : manifest.at("more_sites")) {
    auto it = more_by_site.find(e.at("site").get<std::string>());
    if (it == more_by_site.end()) throw CheckpointError("unknown MoRE site in checkpoint");
    if (e.at("scaling_tasks").get<std::size_t>() != it->second->scaling_tasks()) {
      throw CheckpointError("scaling task count mismatch at " + it->first);
    }
    if (e.at("mode") == "frozen_mapping") {
      it->second->set_frozen_mapping(e.at("frozen_map").get<std::vector<std::size_t>>());
    }
  }
  return {std::move(config), std::move(model), manifest.at("sampler_rng_state").get<std::string>()};
}

}  // namespace morekit
