#include <gtest/gtest.h>

#include <set>

#include "tabcpt/contamination.hpp"
#include "tabcpt/error.hpp"
#include "tabcpt/prior.hpp"

namespace tabcpt {
namespace {

PriorConfig config(PriorFamily family, std::uint64_t seed = 17) {
  PriorConfig c;
  c.family = family;
  c.max_features = 6;
  c.max_classes = 4;
  c.min_rows = 40;
  c.max_rows = 120;
  c.seed = seed;
  return c;
}

bool same_table(const Table& a, const Table& b) {
  if (a.target != b.target || a.n_cols() != b.n_cols()) return false;
  for (std::size_t j = 0; j < a.n_cols(); ++j) {
    if (a.columns[j].values != b.columns[j].values) return false;
  }
  return true;
}

// Rosenblatt perceptron with a bias input; returns the number of training
// errors left after the last epoch.
std::size_t perceptron_errors(const Table& t, std::size_t max_epochs) {
  const std::size_t d = t.n_cols();
  std::vector<double> w(d + 1, 0.0);
  std::size_t errors = 0;
  for (std::size_t epoch = 0; epoch < max_epochs; ++epoch) {
    errors = 0;
    for (std::size_t i = 0; i < t.n_rows(); ++i) {
      double s = w[d];
      for (std::size_t j = 0; j < d; ++j) s += w[j] * t.columns[j].values[i];
      const double y = t.target[i] == 1 ? 1.0 : -1.0;
      if (y * s <= 0.0) {
        ++errors;
        for (std::size_t j = 0; j < d; ++j) w[j] += y * t.columns[j].values[i];
        w[d] += y;
      }
    }
    if (errors == 0) return 0;
  }
  return errors;
}

TEST(SampleTask, DeterministicInSeedAndIndex) {
  for (PriorFamily family : {PriorFamily::random_linear, PriorFamily::random_mlp, PriorFamily::random_tree}) {
    const auto a = sample_task(config(family), 5);
    const auto b = sample_task(config(family), 5);
    EXPECT_TRUE(same_table(a.table, b.table));
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_EQ(a.family, family);
    EXPECT_FALSE(same_table(a.table, sample_task(config(family), 6).table));
  }
}

TEST(SampleTask, ShapeAndClassContract) {
  for (PriorFamily family : {PriorFamily::random_linear, PriorFamily::random_mlp, PriorFamily::random_tree}) {
    const PriorConfig c = config(family);
    for (std::size_t i = 0; i < 200; ++i) {
      const Table t = sample_task(c, i).table;
      t.validate();
      ASSERT_GE(t.n_rows(), c.min_rows);
      ASSERT_LE(t.n_rows(), c.max_rows);
      ASSERT_GE(t.n_cols(), 1u);
      ASSERT_LE(t.n_cols(), c.max_features);
      ASSERT_LE(t.n_classes(), c.max_classes);
      ASSERT_GE(std::set<int>(t.target.begin(), t.target.end()).size(), 2u);
    }
  }
}

TEST(SampleTask, EveryClassMeetsTheMinimumShare) {
  for (PriorFamily family : {PriorFamily::random_linear, PriorFamily::random_mlp, PriorFamily::random_tree}) {
    for (int max_classes : {4, 10}) {
      PriorConfig c = config(family, 7);
      c.max_classes = max_classes;
      for (std::size_t i = 0; i < 100; ++i) {
        const Table t = sample_task(c, i).table;
        std::vector<std::size_t> counts(static_cast<std::size_t>(t.n_classes()), 0);
        for (int y : t.target) ++counts[static_cast<std::size_t>(y)];
        // 5% of the row count, rounded up
        const std::size_t floor = (t.n_rows() * 5 + 99) / 100;
        for (std::size_t count : counts) ASSERT_GE(count, floor) << to_string(family) << " task " << i;
      }
    }
  }
}

TEST(SampleTask, ZeroMinimumShareAdmitsSliverClasses) {
  // Without the floor, random trees do produce classes under 5% of the rows.
  PriorConfig c = config(PriorFamily::random_tree, 7);
  c.max_classes = 4;
  c.min_class_fraction = 0.0;
  bool sliver = false;
  for (std::size_t i = 0; i < 200 && !sliver; ++i) {
    const Table t = sample_task(c, i).table;
    std::vector<std::size_t> counts(static_cast<std::size_t>(t.n_classes()), 0);
    for (int y : t.target) ++counts[static_cast<std::size_t>(y)];
    for (std::size_t count : counts) sliver = sliver || count * 20 < t.n_rows();
  }
  EXPECT_TRUE(sliver);
}

TEST(SampleTask, NoiseFreeBinaryLinearTasksAreLinearlySeparable) {
  PriorConfig c = config(PriorFamily::random_linear);
  c.max_classes = 2;
  c.noise = 0.0;
  for (std::size_t i = 0; i < 30; ++i) {
    const Table t = sample_task(c, i).table;
    ASSERT_EQ(perceptron_errors(t, 20000), 0u) << "task " << i;
  }
}

TEST(SampleTask, BinaryLinearLabelBalanceOverThousandTasks) {
  PriorConfig c = config(PriorFamily::random_linear, 99);
  c.max_classes = 2;
  double balance = 0.0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const Table t = sample_task(c, i).table;
    std::size_t ones = 0;
    for (int y : t.target) ones += y == 1 ? 1 : 0;
    balance += static_cast<double>(ones) / static_cast<double>(t.n_rows());
  }
  balance /= 1000.0;
  EXPECT_GE(balance, 0.2);
  EXPECT_LE(balance, 0.8);
}

TEST(TaskStream, EqualConfigsYieldEqualStreams) {
  TaskStream a(config(PriorFamily::random_mlp));
  TaskStream b(config(PriorFamily::random_mlp));
  for (int i = 0; i < 3; ++i) EXPECT_TRUE(same_table(a.next().table, b.next().table));
}

TEST(TaskStream, DifferentSeedsDiffer) {
  TaskStream a(config(PriorFamily::random_tree, 1));
  TaskStream b(config(PriorFamily::random_tree, 2));
  for (int i = 0; i < 3; ++i) EXPECT_NE(hash_columns(a.next().table), hash_columns(b.next().table));
}

TEST(TaskStream, RestartMatchesTail) {
  TaskStream full(config(PriorFamily::random_linear));
  for (int i = 0; i < 4; ++i) full.next();
  TaskStream restarted(config(PriorFamily::random_linear), 4);
  for (int i = 0; i < 3; ++i) EXPECT_TRUE(same_table(full.next().table, restarted.next().table));
  EXPECT_EQ(full.position(), 7u);
}

TEST(PriorConfig, Validation) {
  PriorConfig c;
  c.max_classes = 1;
  EXPECT_THROW(c.validate(), Error);
  c = PriorConfig{};
  c.max_classes = 11;
  EXPECT_THROW(c.validate(), Error);
  c = PriorConfig{};
  c.min_rows = 300;
  EXPECT_THROW(c.validate(), Error);
  c = PriorConfig{};
  c.min_class_fraction = 0.5;
  EXPECT_THROW(c.validate(), Error);
  c.min_class_fraction = -0.01;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(parse_prior_family("random-tree"), PriorFamily::random_tree);
  EXPECT_THROW(parse_prior_family("gaussian"), Error);
}

}  // namespace
}  // namespace tabcpt
