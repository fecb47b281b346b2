#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "tabcpt/digest.hpp"
#include "tabcpt/error.hpp"
#include "tabcpt/metrics.hpp"
#include "tabcpt/random.hpp"
#include "tabcpt/train.hpp"
#include "test_support.hpp"

namespace tabcpt {
namespace {

using testing::random_batch;
using testing::random_table;
using testing::tiny_model;

// -- schedule ------------------------------------------------------------------

TEST(Schedule, ExactAnchorValues) {
  const ScheduleConfig s{2e-3, 100, 1100, 1e-4};
  EXPECT_EQ(lr_at_step(s, 0), 0.0);
  EXPECT_EQ(lr_at_step(s, 50), 1e-3);
  EXPECT_EQ(lr_at_step(s, 100), 2e-3);
  EXPECT_EQ(lr_at_step(s, 600), (2e-3 + 1e-4) / 2.0);
  EXPECT_EQ(lr_at_step(s, 1100), 1e-4);
  EXPECT_THROW(lr_at_step(s, 1101), Error);
}

TEST(Schedule, MidpointWithZeroFloorIsHalfPeak) {
  const ScheduleConfig s{3e-7, 1000, 20000, 0.0};
  EXPECT_EQ(lr_at_step(s, 1000 + 19000 / 2), 1.5e-7);
}

TEST(Schedule, ContinuousAtBoundaryAndNonIncreasingAfter) {
  const ScheduleConfig s{1.0, 40, 400, 0.0};
  EXPECT_NEAR(lr_at_step(s, 39), 39.0 / 40.0, 1e-15);
  EXPECT_EQ(lr_at_step(s, 40), 1.0);
  double previous = lr_at_step(s, 40);
  for (std::size_t step = 41; step <= 400; ++step) {
    const double lr = lr_at_step(s, step);
    ASSERT_LE(lr, previous);
    ASSERT_LT(previous - lr, 0.01);  // no jumps
    previous = lr;
  }
}

TEST(Schedule, Validation) {
  EXPECT_THROW((ScheduleConfig{1e-3, 10, 10, 0.0}.validate()), Error);
  EXPECT_THROW((ScheduleConfig{-1.0, 1, 10, 0.0}.validate()), Error);
  EXPECT_NO_THROW((ScheduleConfig{1e-3, 0, 10, 0.0}.validate()));
}

// -- L2-SP -------------------------------------------------------------------------

TEST(L2SP, Examples) {
  const std::vector<double> anchor = {1.0, -2.0};
  EXPECT_EQ(l2sp_penalty(anchor, L2SPConfig{0.003, anchor}), 0.0);
  EXPECT_EQ(l2sp_penalty(std::vector<double>{2.0, -2.0}, L2SPConfig{0.003, anchor}), 0.0015);
  EXPECT_EQ(l2sp_penalty(std::vector<double>{3.0, 4.0}, L2SPConfig{2.0, {0.0, 0.0}}), 25.0);
  EXPECT_EQ(l2sp_gradient(anchor, L2SPConfig{0.003, anchor}), (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(l2sp_gradient(std::vector<double>{2.0, 0.0}, L2SPConfig{0.003, {0.0, 0.0}}),
            (std::vector<double>{0.006, 0.0}));
  EXPECT_THROW(l2sp_penalty(std::vector<double>{1.0}, L2SPConfig{1.0, anchor}), Error);
}

TEST(L2SP, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  for (double alpha : {0.003, 1.0, 1000.0}) {
    L2SPConfig config{alpha, std::vector<double>(30)};
    std::vector<double> w(30);
    for (auto& x : config.anchor) x = normal(rng);
    for (auto& x : w) x = normal(rng);
    const auto g = l2sp_gradient(w, config);
    for (std::size_t i = 0; i < w.size(); ++i) {
      // The penalty is quadratic, so the central difference is exact up to rounding.
      const double h = 1e-4;
      auto plus = w;
      auto minus = w;
      plus[i] += h;
      minus[i] -= h;
      const double numeric = (l2sp_penalty(plus, config) - l2sp_penalty(minus, config)) / (2 * h);
      ASSERT_LT(std::abs(numeric - g[i]) / std::max(1.0, std::abs(g[i])), 1e-8);
    }
  }
}

// -- AdamW -------------------------------------------------------------------------

TEST(AdamW, FirstStepMovesByLearningRate) {
  std::vector<double> w = {0.5};
  OptimizerState state(1, AdamWConfig{});
  adamw_step(w, std::vector<double>{1.0}, state, 0.1);
  EXPECT_NEAR(w[0] - 0.5, -0.1, 1e-8);
  EXPECT_EQ(state.t, 1u);
}

TEST(AdamW, DecoupledDecayWithZeroGradient) {
  std::vector<double> w = {2.0, -4.0};
  OptimizerState state(2, AdamWConfig{0.9, 0.999, 1e-8, 0.01});
  adamw_step(w, std::vector<double>{0.0, 0.0}, state, 0.1);
  EXPECT_DOUBLE_EQ(w[0], 2.0 * (1.0 - 0.001));
  EXPECT_DOUBLE_EQ(w[1], -4.0 * (1.0 - 0.001));
}

TEST(AdamW, ThreeConstantStepsMatchHandTrace) {
  // g = 1 each step, lr = 0.1, defaults. Hand-stepped:
  //   m: 0.1, 0.19, 0.271        v: 0.001, 0.001999, 0.002997001
  //   bias-corrected m and v are exactly 1, so each step moves by 0.1 / (1 + 1e-8).
  std::vector<double> w = {0.0};
  OptimizerState state(1, AdamWConfig{});
  const double m_trace[] = {0.1, 0.19, 0.271};
  const double v_trace[] = {0.001, 0.001999, 0.002997001};
  const double w_trace[] = {-0.099999999, -0.199999998, -0.299999997};
  for (int k = 0; k < 3; ++k) {
    adamw_step(w, std::vector<double>{1.0}, state, 0.1);
    EXPECT_NEAR(state.m[0], m_trace[k], 1e-15);
    EXPECT_NEAR(state.v[0], v_trace[k], 1e-15);
    EXPECT_NEAR(w[0], w_trace[k], 1e-15);
  }
  EXPECT_EQ(state.t, 3u);
}

TEST(AdamW, NonFiniteGradientLeavesStateUntouched) {
  std::vector<double> w = {1.0, 2.0};
  OptimizerState state(2, AdamWConfig{});
  try {
    adamw_step(w, std::vector<double>{0.5, std::nan("")}, state, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numerical);
  }
  EXPECT_EQ(w, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(state.t, 0u);
  EXPECT_EQ(state.m, (std::vector<double>{0.0, 0.0}));
}

// -- total loss --------------------------------------------------------------------

TEST(TotalLoss, PenaltyOffOrAtAnchorEqualsCrossEntropy) {
  const ModelConfig c = tiny_model();
  const auto params = init_params(c, 1);
  const Batch b = random_batch(c, 6, 4, 3, 3, 2);
  const double ce = loss_ce(forward(c, params, b), b.query_y);
  std::vector<double> other = init_params(c, 2);
  const L2SPConfig off{0.0, other};
  const L2SPConfig at_anchor{5.0, params};
  EXPECT_EQ(total_loss(c, params, b, &off).loss, ce);
  EXPECT_EQ(total_loss(c, params, b, &at_anchor).loss, ce);
  EXPECT_EQ(total_loss(c, params, b, nullptr).loss, ce);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  const ModelConfig c = tiny_model();
  auto params = init_params(c, 3);
  const L2SPConfig l2sp{0.7, init_params(c, 4)};
  const Batch b = random_batch(c, 6, 4, 3, 3, 5);
  const TotalLoss t = total_loss(c, params, b, &l2sp);
  EXPECT_DOUBLE_EQ(t.loss, t.cross_entropy + t.penalty);
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
  for (int k = 0; k < 40; ++k) {
    const std::size_t i = pick(rng);
    const double h = 1e-5;
    auto plus = params;
    auto minus = params;
    plus[i] += h;
    minus[i] -= h;
    const double numeric =
        (total_loss(c, plus, b, &l2sp).loss - total_loss(c, minus, b, &l2sp).loss) / (2 * h);
    ASSERT_LT(std::abs(numeric - t.grad[i]) / std::max({std::abs(numeric), std::abs(t.grad[i]), 1e-6}), 1e-4);
  }
}

// -- training loops ----------------------------------------------------------------

PriorConfig small_prior(std::uint64_t seed = 5) {
  PriorConfig p;
  p.max_features = 4;
  p.max_classes = 2;
  p.min_rows = 30;
  p.max_rows = 60;
  p.seed = seed;
  return p;
}

TrainConfig small_train(std::size_t steps, double lr = 3e-3) {
  TrainConfig t;
  t.schedule = ScheduleConfig{lr, steps / 10, steps, 0.0};
  t.caps = CapConfig{64, 400000};
  t.alpha = 0.0;
  t.seed = 21;
  t.log_every = 10;
  return t;
}

TEST(PretrainBase, ZeroStepsReturnsInitialization) {
  const ModelConfig model = tiny_model();
  TrainConfig t = small_train(0);
  const Checkpoint c = pretrain_base(small_prior(), model, t);
  EXPECT_EQ(c.params, init_params(model, model.init_seed));
  EXPECT_EQ(c.stage, Stage::base);
  EXPECT_EQ(c.steps, 0u);
}

TEST(PretrainBase, BitIdenticalAcrossRuns) {
  const ModelConfig model = tiny_model();
  TrainLog log_a;
  TrainLog log_b;
  const Checkpoint a = pretrain_base(small_prior(), model, small_train(30), &log_a);
  const Checkpoint b = pretrain_base(small_prior(), model, small_train(30), &log_b);
  EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
  ASSERT_EQ(log_a.entries.size(), 3u);
  EXPECT_EQ(log_a.entries.back().loss, log_b.entries.back().loss);
  EXPECT_EQ(log_a.entries.back().penalty, 0.0);
}

TEST(PretrainBase, LowersLossOnProbeBatch) {
  const ModelConfig model = tiny_model(4, 16, 1, 2, 32);
  const PriorConfig prior = small_prior();
  const Checkpoint c = pretrain_base(prior, model, small_train(400));
  PriorConfig probe_prior = prior;
  probe_prior.seed = 999;
  double before = 0.0;
  double after = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    const Batch probe = batch_from_table(sample_task(probe_prior, i).table, small_train(1), 4, i);
    before += loss_ce(forward(model, init_params(model, model.init_seed), probe), probe.query_y);
    after += loss_ce(forward(model, c.params, probe), probe.query_y);
  }
  EXPECT_LT(after, before);
}

TEST(RunTraining, ZeroAlphaAnchorAndNoAnchorShareTheUpdateRule) {
  const ModelConfig model = tiny_model();
  const auto init = init_params(model, 8);
  const BatchSource source = [&](std::size_t step) { return random_batch(model, 6, 4, 3, 2, step); };
  const TrainConfig t = small_train(15);
  const L2SPConfig zero{0.0, init_params(model, 9)};
  EXPECT_EQ(run_training(model, init, source, t, nullptr, nullptr), run_training(model, init, source, t, &zero, nullptr));
}

TEST(RunTraining, NonFiniteLossAborts) {
  const ModelConfig model = tiny_model();
  auto init = init_params(model, 8);
  init[0] = std::numeric_limits<double>::infinity();
  const BatchSource source = [&](std::size_t step) { return random_batch(model, 6, 4, 3, 2, step); };
  try {
    run_training(model, init, source, small_train(5), nullptr, nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numerical);
  }
}

std::vector<Table> tree_corpus(std::size_t n) {
  PriorConfig p = small_prior(77);
  p.family = PriorFamily::random_tree;
  std::vector<Table> corpus;
  for (std::size_t i = 0; i < n; ++i) corpus.push_back(sample_task(p, i).table);
  return corpus;
}

Checkpoint small_base() {
  return pretrain_base(small_prior(), tiny_model(), small_train(20));
}

TEST(ContinuePretrain, ZeroLearningRateKeepsBase) {
  const Checkpoint base = small_base();
  TrainConfig t = small_train(10, 0.0);
  t.alpha = 0.003;
  const Checkpoint c = continue_pretrain(base, tree_corpus(3), t);
  EXPECT_EQ(c.params, base.params);
  EXPECT_EQ(c.stage, Stage::continued);
  EXPECT_EQ(c.anchor_digest, digest_doubles(base.params));
}

TEST(ContinuePretrain, SingleStepOnOneDatasetMoves) {
  const Checkpoint base = small_base();
  TrainConfig t = small_train(1);
  t.schedule.warmup_steps = 0;
  TrainLog log;
  const Checkpoint c = continue_pretrain(base, tree_corpus(1), t, &log);
  EXPECT_NE(c.params, base.params);
  EXPECT_EQ(c.steps, 1u);
  ASSERT_EQ(log.entries.size(), 1u);
  EXPECT_EQ(log.entries[0].step, 1u);
}

TEST(ContinuePretrain, LargerAlphaStaysCloserToAnchor) {
  const Checkpoint base = small_base();
  const auto corpus = tree_corpus(4);
  double previous = std::numeric_limits<double>::infinity();
  for (double alpha : {0.0, 0.003, 1.0, 1000.0}) {
    TrainConfig t = small_train(40);
    t.alpha = alpha;
    const double distance = l2_distance(continue_pretrain(base, corpus, t).params, base.params);
    EXPECT_LE(distance, previous) << "alpha " << alpha;
    previous = distance;
  }
}

TEST(ContinuePretrain, EmptyOrUnusableCorpusIsAnInputError) {
  const Checkpoint base = small_base();
  try {
    continue_pretrain(base, std::vector<Table>{}, small_train(3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::input);
  }
  TrainLog log;
  std::vector<Table> corpus = {random_table(40, 9, 2, 1), random_table(30, 2, 2, 2)};  // first is too wide
  continue_pretrain(base, corpus, small_train(3), &log);
  ASSERT_EQ(log.warnings.size(), 1u);
}

TEST(AugmentTable, KeepsRowsAndAtLeastTwoClasses) {
  const Table t = random_table(100, 6, 5, 3);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Table a = augment_table(t, seed);
    a.validate();
    ASSERT_EQ(a.n_rows(), t.n_rows());
    ASSERT_GE(a.n_cols(), 1u);
    ASSERT_LE(a.n_cols(), t.n_cols());
    ASSERT_GE(a.n_classes(), 2);
    ASSERT_LE(a.n_classes(), t.n_classes());
    // Each kept column is an original column, possibly negated.
    for (const Column& column : a.columns) {
      bool found = false;
      for (const Column& original : t.columns) {
        bool same = true;
        bool negated = true;
        for (std::size_t i = 0; i < t.n_rows(); ++i) {
          same &= column.values[i] == original.values[i];
          negated &= column.values[i] == -original.values[i];
        }
        found |= same || negated;
      }
      ASSERT_TRUE(found);
    }
    // Rows sharing an original class still share a class.
    for (std::size_t i = 1; i < t.n_rows(); ++i) {
      if (t.target[i] == t.target[0]) ASSERT_EQ(a.target[i], a.target[0]);
    }
  }
  EXPECT_EQ(augment_table(t, 4).target, augment_table(t, 4).target);
}

TEST(TrainConfig, Validation) {
  TrainConfig t;
  t.alpha = -1.0;
  EXPECT_THROW(t.validate(), Error);
  t = TrainConfig{};
  t.context_fraction = 1.0;
  EXPECT_THROW(t.validate(), Error);
  t = TrainConfig{};
  t.caps.max_rows = 0;
  EXPECT_THROW(t.validate(), Error);
  const TrainConfig paper = paper_fidelity_train_config();
  EXPECT_EQ(paper.schedule.peak_lr, 3e-7);
  EXPECT_EQ(paper.alpha, 0.003);
  EXPECT_EQ(paper.steps(), 20000u);
  EXPECT_EQ(paper.caps, (CapConfig{20000, 400000}));
  EXPECT_EQ(paper.context_fraction, 0.6);
}

}  // namespace
}  // namespace tabcpt
