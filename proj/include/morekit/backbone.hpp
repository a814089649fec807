// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0
//
// Small pre-norm encoder with a frozen token head. Every layer has six
// projection sites (q, k, v, o, w_i, w_o) that can carry a fixed-rank LoRA
// adapter or a MoRE layer. Activations are column-major sequences:
// width × (samples · seq_len).

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "morekit/lora_adapter.hpp"
#include "morekit/more_layer.hpp"

namespace morekit {

struct BackboneConfig {
  std::size_t num_layers = 2;
  std::size_t width = 16;
  std::size_t ffn_width = 16;
  std::size_t num_heads = 2;
  std::size_t vocab_size = 32;
  std::size_t max_seq_len = 8;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

enum class AdapterMode { none, lora_fixed, more };
const char* adapter_mode_name(AdapterMode m);
AdapterMode parse_adapter_mode(const std::string& s);

enum class SiteKind { q, k, v, o, wi, wo };
inline constexpr std::array<SiteKind, 6> kSiteKinds = {SiteKind::q, SiteKind::k, SiteKind::v,
                                                       SiteKind::o, SiteKind::wi, SiteKind::wo};
const char* site_name(SiteKind k);
SiteKind parse_site(const std::string& s);

struct AdapterSettings {
  AdapterMode mode = AdapterMode::none;
  std::size_t rank = 8;
  std::size_t num_tasks = 1;
  /// Task-embedding dimension; 0 means "same as the site input width".
  std::size_t embed_dim = 0;
  double alpha = 1.0;
  MoreOptions more;
};

/// One projection site: a frozen weight, a LoRA adapter or a MoRE layer.
class AdaptedSite {
 public:
  using Impl = std::variant<ag::Parameter, LoraAdapter, MoreLayer>;

  AdaptedSite(std::size_t layer, SiteKind kind, Impl impl)
      : layer_(layer), kind_(kind), impl_(std::move(impl)) {}

  ag::Var apply(ag::Graph& g, ag::Var x, std::size_t task);

  std::size_t layer() const { return layer_; }
  SiteKind kind() const { return kind_; }
  std::string name() const;

  const Tensor& base_weight() const;
  /// Adds `delta` to the frozen base weight (teacher construction).
  void perturb_base(const Tensor& delta);

  LoraAdapter* lora();
  MoreLayer* more();
  const LoraAdapter* lora() const;
  const MoreLayer* more() const;
  /// Every parameter at this site, frozen ones included.
  std::vector<ag::Parameter*> parameters();
  std::vector<const ag::Parameter*> parameters() const;

 private:
  std::size_t layer_;
  SiteKind kind_;
  Impl impl_;
};

class Backbone {
 public:
  /// Frozen weights come from `backbone_seed` and are identical for every
  /// adapter mode; adapter weights come from `adapter_seed`.
  static Backbone build(const BackboneConfig& config, const AdapterSettings& adapters,
                        std::uint64_t backbone_seed, std::uint64_t adapter_seed);

  struct Output {
    /// vocab × (N·seq_len) next-token distributions, one column per position.
    ag::Var probs;
    /// Per site (same order as sites()), mean-pooled site input: in_dim × N.
    /// Filled only for MoRE sites.
    std::vector<ag::Var> pooled_inputs;
    std::size_t seq_len = 0;
  };

  /// All sequences in `tokens` must share one length ≤ max_seq_len.
  /// Throws std::out_of_range on out-of-vocabulary tokens.
  Output forward(ag::Graph& g, std::span<const std::vector<std::size_t>> tokens,
                 std::size_t task);

  const BackboneConfig& config() const { return config_; }
  const AdapterSettings& adapter_settings() const { return adapters_; }
  AdapterMode mode() const { return adapters_.mode; }

  std::vector<AdaptedSite>& sites() { return sites_; }
  const std::vector<AdaptedSite>& sites() const { return sites_; }
  std::vector<MoreLayer*> more_layers();
  std::vector<const MoreLayer*> more_layers() const;

  std::vector<ag::Parameter*> parameters();
  std::vector<const ag::Parameter*> parameters() const;
  std::vector<ag::Parameter*> trainable_parameters();
  std::size_t trainable_count() const;
  /// Fingerprint of every frozen parameter value.
  std::string frozen_hash() const;

  /// Switches every MoRE site to its precomputed task → rank mapping.
  void freeze_mapping();
  std::size_t num_tasks() const { return adapters_.num_tasks; }
  /// Adds one task to every MoRE site; `rows[i]` seeds site i (empty → Kaiming).
  void add_task(const std::vector<std::optional<Tensor>>& rows, Rng& rng);

 private:
  BackboneConfig config_;
  AdapterSettings adapters_;
  ag::Parameter embed_;  // vocab × width
  ag::Parameter pos_;    // width × max_seq_len
  ag::Parameter head_;   // vocab × width
  std::vector<AdaptedSite> sites_;
};

}  // namespace morekit
