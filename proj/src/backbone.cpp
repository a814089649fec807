// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "morekit/hash.hpp"
#include "morekit/ops.hpp"
#include "morekit/rng.hpp"

namespace morekit {

namespace {
template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;
}  // namespace

void BackboneConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("backbone.") + field + ": " + what);
  };
  require(num_layers >= 1, "num_layers", "must be >= 1");
  require(width >= 1, "width", "must be >= 1");
  require(ffn_width >= 1, "ffn_width", "must be >= 1");
  require(num_heads >= 1, "num_heads", "must be >= 1");
  require(width % num_heads == 0, "num_heads", "must divide width");
  require(vocab_size >= 2, "vocab_size", "must be >= 2");
  require(max_seq_len >= 1, "max_seq_len", "must be >= 1");
}

const char* adapter_mode_name(AdapterMode m) {
  switch (m) {
    case AdapterMode::none: return "none";
    case AdapterMode::lora_fixed: return "lora_fixed";
    case AdapterMode::more: return "more";
  }
  return "?";
}

AdapterMode parse_adapter_mode(const std::string& s) {
  if (s == "none") return AdapterMode::none;
  if (s == "lora_fixed" || s == "lora") return AdapterMode::lora_fixed;
  if (s == "more") return AdapterMode::more;
  throw std::invalid_argument("unknown adapter mode '" + s + "'");
}

const char* site_name(SiteKind k) {
  switch (k) {
    case SiteKind::q: return "q";
    case SiteKind::k: return "k";
    case SiteKind::v: return "v";
    case SiteKind::o: return "o";
    case SiteKind::wi: return "wi";
    case SiteKind::wo: return "wo";
  }
  return "?";
}

SiteKind parse_site(const std::string& s) {
  for (SiteKind k : kSiteKinds)
    if (s == site_name(k)) return k;
  throw std::invalid_argument("unknown site '" + s + "'");
}

std::string AdaptedSite::name() const {
  return "layers." + std::to_string(layer_) + "." + site_name(kind_);
}

ag::Var AdaptedSite::apply(ag::Graph& g, ag::Var x, std::size_t task) {
  return std::visit(overloaded{
                        [&](ag::Parameter& w) { return ag::matmul(g.param(w), x); },
                        [&](LoraAdapter& l) { return l.forward(g, x); },
                        [&](MoreLayer& m) { return m.forward(g, x, task); },
                    },
                    impl_);
}

const Tensor& AdaptedSite::base_weight() const {
  return std::visit(overloaded{
                        [](const ag::Parameter& w) -> const Tensor& { return w.value; },
                        [](const LoraAdapter& l) -> const Tensor& { return l.w0().value; },
                        [](const MoreLayer& m) -> const Tensor& { return m.adapter().w0().value; },
                    },
                    impl_);
}

void AdaptedSite::perturb_base(const Tensor& delta) {
  Tensor* w = std::visit(overloaded{
                             [](ag::Parameter& p) { return &p.value; },
                             [](LoraAdapter& l) { return &l.w0().value; },
                             [](MoreLayer& m) { return &m.adapter().w0().value; },
                         },
                         impl_);
  if (!w->same_shape(delta)) throw ShapeError("perturb_base: shape mismatch at " + name());
  *w += delta;
}

LoraAdapter* AdaptedSite::lora() { return std::get_if<LoraAdapter>(&impl_); }
MoreLayer* AdaptedSite::more() { return std::get_if<MoreLayer>(&impl_); }
const LoraAdapter* AdaptedSite::lora() const { return std::get_if<LoraAdapter>(&impl_); }
const MoreLayer* AdaptedSite::more() const { return std::get_if<MoreLayer>(&impl_); }

std::vector<ag::Parameter*> AdaptedSite::parameters() {
  return std::visit(overloaded{
                        [](ag::Parameter& w) { return std::vector<ag::Parameter*>{&w}; },
                        [](LoraAdapter& l) {
                          return std::vector<ag::Parameter*>{&l.w0(), &l.a(), &l.b()};
                        },
                        [](MoreLayer& m) {
                          auto& l = m.adapter();
                          return std::vector<ag::Parameter*>{&l.w0(), &l.a(), &l.b(),
                                                             &m.embeddings(), &m.gate_weight(),
                                                             &m.gate_bias()};
                        },
                    },
                    impl_);
}

std::vector<const ag::Parameter*> AdaptedSite::parameters() const {
  auto ps = const_cast<AdaptedSite*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

Backbone Backbone::build(const BackboneConfig& config, const AdapterSettings& adapters,
                         std::uint64_t backbone_seed, std::uint64_t adapter_seed) {
  config.validate();
  if (adapters.mode != AdapterMode::none) {
    if (adapters.rank == 0) throw std::invalid_argument("adapter.rank: must be >= 1");
    if (adapters.rank > std::min(config.width, config.ffn_width)) {
      throw std::invalid_argument("adapter.rank: exceeds the smallest projection dimension");
    }
  }
  if (adapters.mode == AdapterMode::more) {
    if (adapters.num_tasks == 0) throw std::invalid_argument("adapter.num_tasks: must be >= 1");
    const std::size_t h = adapters.embed_dim == 0 ? config.width : adapters.embed_dim;
    if (h != config.width || (config.ffn_width != config.width)) {
      throw std::invalid_argument(
          "adapter.embed_dim: every MoRE site pools its input as the sample representation, "
          "so embed_dim must equal width and ffn_width must equal width");
    }
  }

  Backbone bb;
  bb.config_ = config;
  bb.adapters_ = adapters;
  if (bb.adapters_.mode == AdapterMode::more && bb.adapters_.embed_dim == 0)
    bb.adapters_.embed_dim = config.width;

  const std::size_t D = config.width, F = config.ffn_width, V = config.vocab_size;
  Rng rng(derive_seed(backbone_seed, "backbone"));
  bb.embed_ = ag::Parameter("embed", gaussian_tensor({V, D}, 1.0, rng), false);
  bb.pos_ = ag::Parameter("pos", gaussian_tensor({D, config.max_seq_len}, 0.5, rng), false);
  bb.head_ = ag::Parameter("head",
                           gaussian_tensor({V, D}, 2.0 / std::sqrt(static_cast<double>(D)), rng),
                           false);

  for (std::size_t l = 0; l < config.num_layers; ++l) {
    for (SiteKind kind : kSiteKinds) {
      const std::size_t out = kind == SiteKind::wi ? F : D;
      const std::size_t in = kind == SiteKind::wo ? F : D;
      const std::string name = "layers." + std::to_string(l) + "." + site_name(kind);
      Tensor w0 = gaussian_tensor({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
      const std::uint64_t site_seed = derive_seed(adapter_seed, name);
      switch (adapters.mode) {
        case AdapterMode::none:
          bb.sites_.emplace_back(l, kind, ag::Parameter(name + ".W0", std::move(w0), false));
          break;
        case AdapterMode::lora_fixed:
          bb.sites_.emplace_back(l, kind,
                                 LoraAdapter::init(out, in, adapters.rank, site_seed,
                                                   std::move(w0), adapters.alpha, name));
          break;
        case AdapterMode::more: {
          LoraAdapter ad = LoraAdapter::init(out, in, adapters.rank, site_seed, std::move(w0),
                                             adapters.alpha, name);
          bb.sites_.emplace_back(l, kind,
                                 MoreLayer(std::move(ad), adapters.num_tasks,
                                           bb.adapters_.embed_dim,
                                           derive_seed(site_seed, "gate"), adapters.more));
          break;
        }
      }
    }
  }
  return bb;
}

Backbone::Output Backbone::forward(ag::Graph& g, std::span<const std::vector<std::size_t>> tokens,
                                   std::size_t task) {
  if (tokens.empty()) throw std::invalid_argument("forward: empty batch");
  const std::size_t S = tokens.front().size();
  if (S == 0 || S > config_.max_seq_len) {
    throw std::invalid_argument("forward: sequence length must be in [1, max_seq_len]");
  }
  const std::size_t N = tokens.size(), D = config_.width;
  Tensor x0({D, N * S});
  for (std::size_t b = 0; b < N; ++b) {
    if (tokens[b].size() != S) throw std::invalid_argument("forward: ragged batch");
    for (std::size_t i = 0; i < S; ++i) {
      const std::size_t tok = tokens[b][i];
      if (tok >= config_.vocab_size) {
        throw std::out_of_range("forward: token " + std::to_string(tok) + " outside vocabulary");
      }
      for (std::size_t c = 0; c < D; ++c) x0(c, b * S + i) = embed_.value(tok, c) + pos_.value(c, i);
    }
  }

  Output out;
  out.seq_len = S;
  out.pooled_inputs.resize(sites_.size());
  auto run_site = [&](std::size_t idx, ag::Var in) {
    if (sites_[idx].more() != nullptr) out.pooled_inputs[idx] = ag::mean_pool_cols(in, S);
    return sites_[idx].apply(g, in, task);
  };

  ag::Var x = g.constant(std::move(x0));
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const std::size_t base = l * kSiteKinds.size();
    ag::Var u = ag::layer_norm_cols(x);
    ag::Var q = run_site(base + 0, u);
    ag::Var k = run_site(base + 1, u);
    ag::Var v = run_site(base + 2, u);
    ag::Var att = ag::attention(q, k, v, config_.num_heads, S);
    x = ag::add(x, run_site(base + 3, att));
    ag::Var u2 = ag::layer_norm_cols(x);
    ag::Var hidden = ag::gelu(run_site(base + 4, u2));
    x = ag::add(x, run_site(base + 5, hidden));
  }
  ag::Var logits = ag::matmul(g.param(head_), ag::layer_norm_cols(x));
  out.probs = ag::softmax(logits, 1.0);
  return out;
}

std::vector<MoreLayer*> Backbone::more_layers() {
  std::vector<MoreLayer*> out;
  for (auto& s : sites_)
    if (auto* m = s.more()) out.push_back(m);
  return out;
}

std::vector<const MoreLayer*> Backbone::more_layers() const {
  std::vector<const MoreLayer*> out;
  for (const auto& s : sites_)
    if (const auto* m = s.more()) out.push_back(m);
  return out;
}

std::vector<ag::Parameter*> Backbone::parameters() {
  std::vector<ag::Parameter*> out{&embed_, &pos_, &head_};
  for (auto& s : sites_)
    for (auto* p : s.parameters()) out.push_back(p);
  return out;
}

std::vector<const ag::Parameter*> Backbone::parameters() const {
  auto ps = const_cast<Backbone*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::vector<ag::Parameter*> Backbone::trainable_parameters() {
  std::vector<ag::Parameter*> out;
  for (auto* p : parameters())
    if (p->trainable) out.push_back(p);
  return out;
}

std::size_t Backbone::trainable_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters())
    if (p->trainable) n += p->size();
  return n;
}

std::string Backbone::frozen_hash() const {
  Fnv1a h;
  for (const auto* p : parameters()) {
    const bool backbone_weight = p->name == "embed" || p->name == "pos" || p->name == "head" ||
                                 p->name.ends_with(".W0");
    if (!backbone_weight) continue;
    h.update(p->name);
    h.update(p->value.data());
  }
  return h.hex();
}

void Backbone::freeze_mapping() {
  for (auto* m : more_layers()) m->freeze_mapping();
}

void Backbone::add_task(const std::vector<std::optional<Tensor>>& rows, Rng& rng) {
  auto layers = more_layers();
  if (!rows.empty() && rows.size() != layers.size()) {
    throw std::invalid_argument("add_task: one embedding row per MoRE site expected");
  }
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i]->add_task(rows.empty() ? std::nullopt : rows[i], rng);
  ++adapters_.num_tasks;
}

}  // namespace morekit
