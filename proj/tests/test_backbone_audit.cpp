// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "e2e_gradcheck.hpp"
#include "morekit/backbone.hpp"
#include "morekit/param_audit.hpp"
#include "morekit/synthetic_tasks.hpp"
#include "test_util.hpp"

namespace morekit {
namespace {

AdapterSettings more_settings(std::size_t r = 4, std::size_t tasks = 3) {
  AdapterSettings ad;
  ad.mode = AdapterMode::more;
  ad.rank = r;
  ad.num_tasks = tasks;
  return ad;
}

std::vector<std::vector<std::size_t>> random_tokens(std::size_t n, std::size_t len,
                                                    std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> tok(0, vocab - 1);
  std::vector<std::vector<std::size_t>> out(n, std::vector<std::size_t>(len));
  for (auto& s : out)
    for (auto& t : s) t = tok(rng);
  return out;
}

Tensor probs(Backbone& b, const std::vector<std::vector<std::size_t>>& tokens, std::size_t task) {
  ag::Graph g(false);
  return b.forward(g, tokens, task).probs.value();
}

TEST(Backbone, TwoLayersHaveTwelveSites) {
  BackboneConfig cfg;
  Backbone b = Backbone::build(cfg, more_settings(), 1, 2);
  ASSERT_EQ(b.sites().size(), 12u);
  EXPECT_EQ(b.more_layers().size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(b.sites()[i].layer(), i / 6);
    EXPECT_EQ(b.sites()[i].kind(), kSiteKinds[i % 6]);
  }
}

TEST(Backbone, FreshMoreModelEqualsBareBackbone) {
  BackboneConfig cfg;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Backbone bare = Backbone::build(cfg, AdapterSettings{}, seed, 0);
    Backbone more = Backbone::build(cfg, more_settings(), seed, seed + 7);
    AdapterSettings lora;
    lora.mode = AdapterMode::lora_fixed;
    Backbone fixed = Backbone::build(cfg, lora, seed, seed + 7);
    const auto tokens = random_tokens(3, 6, cfg.vocab_size, seed);
    const Tensor want = probs(bare, tokens, 0);
    EXPECT_EQ(probs(more, tokens, seed % 3), want);
    EXPECT_EQ(probs(fixed, tokens, 0), want);
  }
}

TEST(Backbone, OutputColumnsAreDistributions) {
  BackboneConfig cfg;
  Backbone b = Backbone::build(cfg, more_settings(), 3, 4);
  for (MoreLayer* m : b.more_layers()) {
    Rng rng(5);
    m->adapter().b().value = gaussian_tensor(m->adapter().b().value.shape(), 0.5, rng);
  }
  const Tensor p = probs(b, random_tokens(4, 8, cfg.vocab_size, 6), 1);
  ASSERT_EQ(p.rows(), cfg.vocab_size);
  ASSERT_EQ(p.cols(), 32u);
  for (std::size_t c = 0; c < p.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < p.rows(); ++r) {
      EXPECT_GE(p(r, c), 0.0);
      s += p(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Backbone, SamplesAreIndependentAndOrderEquivariant) {
  BackboneConfig cfg;
  Backbone b = Backbone::build(cfg, more_settings(), 8, 9);
  const auto tokens = random_tokens(4, 5, cfg.vocab_size, 10);
  const Tensor all = probs(b, tokens, 0);
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  std::vector<std::vector<std::size_t>> shuffled;
  for (auto i : perm) shuffled.push_back(tokens[i]);
  const Tensor sh = probs(b, shuffled, 0);
  const std::size_t S = 5;
  for (std::size_t j = 0; j < perm.size(); ++j)
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t r = 0; r < cfg.vocab_size; ++r)
        EXPECT_EQ(sh(r, j * S + s), all(r, perm[j] * S + s));
}

TEST(Backbone, BareBackboneIgnoresTask) {
  BackboneConfig cfg;
  Backbone b = Backbone::build(cfg, AdapterSettings{}, 11, 0);
  const auto tokens = random_tokens(2, 4, cfg.vocab_size, 12);
  EXPECT_EQ(probs(b, tokens, 0), probs(b, tokens, 5));
}

TEST(Backbone, RejectsBadInputs) {
  BackboneConfig cfg;
  Backbone b = Backbone::build(cfg, more_settings(), 1, 1);
  ag::Graph g;
  std::vector<std::vector<std::size_t>> oov = {{0, cfg.vocab_size}};
  EXPECT_THROW(b.forward(g, oov, 0), std::out_of_range);
  std::vector<std::vector<std::size_t>> ragged = {{0, 1}, {0}};
  EXPECT_THROW(b.forward(g, ragged, 0), std::invalid_argument);
  std::vector<std::vector<std::size_t>> too_long(1, std::vector<std::size_t>(cfg.max_seq_len + 1, 0));
  EXPECT_THROW(b.forward(g, too_long, 0), std::invalid_argument);
  BackboneConfig bad = cfg;
  bad.num_heads = 3;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Backbone, TrainableSetAndFrozenHash) {
  BackboneConfig cfg;
  Backbone b = Backbone::build(cfg, more_settings(), 1, 1);
  for (ag::Parameter* p : b.trainable_parameters()) EXPECT_TRUE(p->trainable);
  const std::string h = b.frozen_hash();
  b.more_layers()[0]->adapter().b().value[0] = 1.0;
  EXPECT_EQ(b.frozen_hash(), h);
  b.sites()[0].perturb_base(Tensor({cfg.width, cfg.width}, 1e-3));
  EXPECT_NE(b.frozen_hash(), h);
}

class EndToEndGradient : public ::testing::TestWithParam<testing::GateVariant> {};

TEST_P(EndToEndGradient, MatchesFiniteDifferences) {
  double worst = 0.0;
  std::string where;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto rep = testing::end_to_end_gradcheck(seed, GetParam());
    if (rep.max_rel > worst) {
      worst = rep.max_rel;
      where = "seed " + std::to_string(seed) + " " + rep.worst;
    }
  }
  EXPECT_LT(worst, 1e-3) << where;
}

INSTANTIATE_TEST_SUITE_P(Variants, EndToEndGradient,
                         ::testing::Values(testing::GateVariant::ste, testing::GateVariant::no_ste,
                                           testing::GateVariant::soft),
                         [](const auto& info) { return testing::gate_variant_name(info.param); });

// ---- parameter audit ----

TEST(Budget, ClosedForms) {
  BudgetInputs in{2, 3, 5, 7, 4, 6, 11};
  EXPECT_EQ(budget(BudgetMethod::lora, in), 6u * 2 * 3 * 12);
  EXPECT_EQ(budget(BudgetMethod::multilora, in), 6u * 4 * 2 * 3 * 12 + 6 * 2 * 7);
  EXPECT_EQ(budget(BudgetMethod::mixlora, in), 2u * 4 * 2 * 3 * 12 + 2 * 2 * 4 * 5);
  EXPECT_EQ(budget(BudgetMethod::moelora, in), 6u * 2 * 3 * 12 + 6 * 2 * 11 * (4 + 6));
  EXPECT_EQ(budget(BudgetMethod::more, in), 6u * 2 * 3 * 12 + 6 * 2 * 11 * (3 + 6));
  in.parallel.reset();
  EXPECT_THROW(budget(BudgetMethod::multilora, in), std::invalid_argument);
  EXPECT_NO_THROW(budget(BudgetMethod::more, in));
  in.rank = 0;
  EXPECT_THROW(budget(BudgetMethod::lora, in), std::invalid_argument);
}

TEST(Budget, MoreAtWidth768EqualsLoraRank16) {
  BudgetInputs more{12, 8, 768, 768, std::nullopt, 8, 768};
  BudgetInputs lora16{12, 16, 768, 768, std::nullopt, 1, 1};
  EXPECT_EQ(budget(BudgetMethod::more, more), 1769472u);
  EXPECT_EQ(budget(BudgetMethod::lora, lora16), 1769472u);
  BudgetInputs lora8 = lora16;
  lora8.rank = 8;
  EXPECT_EQ(budget(BudgetMethod::lora, lora16), 2 * budget(BudgetMethod::lora, lora8));
}

std::uint64_t count_trainable(const Backbone& b) {
  std::uint64_t n = 0;
  for (const ag::Parameter* p : b.parameters())
    if (p->trainable) n += p->size();
  return n;
}

TEST(Audit, LiveCountsMatchClosedForm) {
  BackboneConfig cfg;
  for (std::size_t r : {1u, 4u, 8u}) {
    for (std::size_t T : {1u, 4u}) {
      Backbone b = Backbone::build(cfg, more_settings(r, T), 1, 2);
      const AuditReport rep = audit(b);
      EXPECT_EQ(rep.status(), "exact");
      EXPECT_EQ(rep.live_trainable, count_trainable(b));
      EXPECT_EQ(rep.expected, 6 * 2 * r * 32 + 6 * 2 * 16 * (r + T));
      EXPECT_EQ(rep.live_counted + rep.gate_bias_unaccounted, rep.live_trainable);
      EXPECT_EQ(rep.gate_bias_unaccounted, 12 * r);
      EXPECT_EQ(rep.effective_inference, rep.live_trainable);
    }
  }
  AdapterSettings lora;
  lora.mode = AdapterMode::lora_fixed;
  lora.rank = 8;
  Backbone lb = Backbone::build(cfg, lora, 1, 2);
  const AuditReport lr = audit(lb);
  EXPECT_EQ(lr.status(), "exact");
  EXPECT_EQ(lr.live_trainable, 6u * 2 * 8 * 32);
}

TEST(Audit, FrozenModelDropsToLoraCount) {
  BackboneConfig cfg;
  Backbone b = Backbone::build(cfg, more_settings(8, 4), 1, 2);
  b.freeze_mapping();
  const AuditReport rep = audit(b);
  EXPECT_EQ(rep.live_trainable, 6u * 2 * 8 * 32);
  EXPECT_EQ(rep.live_trainable, count_trainable(b));
  EXPECT_EQ(rep.effective_inference, 6u * 2 * 8 * 32);
}

TEST(Audit, MissingEmbeddingsAreReported) {
  BackboneConfig cfg;
  AdapterSettings ad = more_settings();
  ad.more.task_embeddings = false;
  Backbone b = Backbone::build(cfg, ad, 1, 2);
  const AuditReport rep = audit(b);
  EXPECT_EQ(rep.status(), "mismatch");
  EXPECT_FALSE(rep.mismatches.empty());
}

// ---- synthetic tasks ----

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t(i, j);
  return m;
}

TEST(PlantedUpdate, HasExactRank) {
  for (std::size_t k = 0; k <= 8; ++k) {
    Rng rng(k);
    const Tensor u = planted_update(16, 16, k, 1.5, rng);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(u));
    const auto s = svd.singularValues();
    for (std::size_t i = 0; i < k; ++i) EXPECT_NEAR(s(i), 1.5, 1e-10) << "k=" << k;
    for (Eigen::Index i = k; i < s.size(); ++i) EXPECT_LT(s(i), 1e-10) << "k=" << k;
    if (k > 0) {
      // Best rank-(k−1) approximation leaves residual σ_k > 0.
      EXPECT_GT(s(k - 1), 1.0);
    }
  }
}

TEST(PlantedUpdate, NestedPrefixesShareDirections) {
  Rng a(3), b(3);
  const Tensor u2 = nested_update(16, 16, 2, 8, 1.0, a);
  const Tensor u5 = nested_update(16, 16, 5, 8, 1.0, b);
  Tensor diff = u5;
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= u2[i];
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(diff));
  EXPECT_NEAR(svd.singularValues()(2), 1.0, 1e-10);
  EXPECT_LT(svd.singularValues()(3), 1e-10);
  Rng c(0);
  EXPECT_THROW(nested_update(4, 4, 9, 8, 1.0, c), std::invalid_argument);
}

std::vector<TaskSpec> small_specs() {
  std::vector<TaskSpec> s(3);
  const std::size_t ranks[] = {0, 2, 4};
  for (std::size_t i = 0; i < 3; ++i) {
    s[i].name = "t" + std::to_string(i);
    s[i].intrinsic_rank = ranks[i];
    s[i].train_size = 50;
    s[i].heldout_size = 20;
    s[i].teacher_seed = i;
  }
  return s;
}

TEST(SyntheticTasks, DeterministicAndLabelledByTeacher) {
  BackboneConfig cfg;
  SuiteConfig suite;
  const auto seeds = SeedPlan::from_run_seed(5);
  const auto specs = small_specs();
  const TaskRegistry a = generate_tasks(specs, suite, cfg, 8, seeds);
  const TaskRegistry b = generate_tasks(specs, suite, cfg, 8, seeds);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(a.task(t).data.train, b.task(t).data.train);
    EXPECT_EQ(a.task(t).data.heldout, b.task(t).data.heldout);
    Backbone teacher = build_teacher(cfg, suite, specs[t], 8, seeds);
    std::vector<std::vector<std::size_t>> inputs;
    std::vector<std::size_t> labels;
    for (const auto& ex : a.task(t).data.heldout) {
      inputs.push_back(ex.tokens);
      labels.push_back(ex.label);
      EXPECT_EQ(ex.tokens[0], prefix_token(suite, t));
      EXPECT_EQ(ex.task, t);
    }
    EXPECT_EQ(predict_labels(teacher, 0, inputs, suite.label_tokens), labels);
  }
}

TEST(SyntheticTasks, RankZeroTaskIsLabelledByBareBackbone) {
  BackboneConfig cfg;
  SuiteConfig suite;
  const auto seeds = SeedPlan::from_run_seed(6);
  const TaskRegistry reg = generate_tasks(small_specs(), suite, cfg, 8, seeds);
  Backbone bare = Backbone::build(cfg, AdapterSettings{}, seeds.backbone, 0);
  std::vector<std::vector<std::size_t>> inputs;
  std::vector<std::size_t> labels;
  for (const auto& ex : reg.task(0).data.train) {
    inputs.push_back(ex.tokens);
    labels.push_back(ex.label);
  }
  EXPECT_EQ(predict_labels(bare, 0, inputs, suite.label_tokens), labels);
}

TEST(SyntheticTasks, InputsAreDistinctWithinATask) {
  BackboneConfig cfg;
  SuiteConfig suite;
  const TaskRegistry reg = generate_tasks(small_specs(), suite, cfg, 8, SeedPlan::from_run_seed(7));
  for (const auto& t : reg.tasks()) {
    std::vector<std::vector<std::size_t>> all;
    for (const auto& ex : t.data.train) all.push_back(ex.tokens);
    for (const auto& ex : t.data.heldout) all.push_back(ex.tokens);
    std::sort(all.begin(), all.end());
    EXPECT_EQ(std::adjacent_find(all.begin(), all.end()), all.end());
  }
}

TEST(SyntheticTasks, DuplicateCopiesDataUnderNewId) {
  BackboneConfig cfg;
  SuiteConfig suite;
  auto specs = small_specs();
  TaskSpec dup;
  dup.name = "t1_copy";
  dup.duplicate_of = "t1";
  specs.push_back(dup);
  const TaskRegistry reg = generate_tasks(specs, suite, cfg, 8, SeedPlan::from_run_seed(8));
  ASSERT_EQ(reg.size(), 4u);
  const auto& orig = reg.task(1).data.train;
  const auto& copy = reg.task(3).data.train;
  ASSERT_EQ(orig.size(), copy.size());
  for (std::size_t i = 0; i < orig.size(); ++i) {
    EXPECT_EQ(orig[i].tokens, copy[i].tokens);
    EXPECT_EQ(orig[i].label, copy[i].label);
    EXPECT_EQ(copy[i].task, 3u);
  }
}

TEST(SyntheticTasks, Errors) {
  BackboneConfig cfg;
  SuiteConfig suite;
  const auto seeds = SeedPlan::from_run_seed(1);
  auto specs = small_specs();
  specs[2].intrinsic_rank = 9;
  EXPECT_THROW(generate_tasks(specs, suite, cfg, 8, seeds), std::invalid_argument);
  specs = small_specs();
  specs[1].name = "t0";
  EXPECT_THROW(generate_tasks(specs, suite, cfg, 8, seeds), std::invalid_argument);
  specs = small_specs();
  specs[0].duplicate_of = "t2";
  EXPECT_THROW(generate_tasks(specs, suite, cfg, 8, seeds), std::invalid_argument);
  EXPECT_THROW(generate_tasks({}, suite, cfg, 8, seeds), std::invalid_argument);
  BackboneConfig tiny = cfg;
  tiny.vocab_size = 7;
  EXPECT_THROW(generate_tasks(small_specs(), suite, tiny, 8, seeds), std::invalid_argument);
}

}  // namespace
}  // namespace morekit
