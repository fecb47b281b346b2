#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tabcpt/error.hpp"
#include "tabcpt/metrics.hpp"

namespace tabcpt {
namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
  Matrix m(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(values.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : values) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

// -- ROC-AUC -----------------------------------------------------------------------

TEST(RocAucBinary, Examples) {
  const std::vector<double> scores = {0.9, 0.8, 0.3, 0.1};
  EXPECT_EQ(roc_auc_binary(scores, std::vector<int>{1, 1, 0, 0}), 1.0);
  EXPECT_EQ(roc_auc_binary(scores, std::vector<int>{1, 0, 1, 0}), 0.75);
  EXPECT_EQ(roc_auc_binary(std::vector<double>(6, 0.4), std::vector<int>{1, 0, 1, 0, 0, 1}), 0.5);
  EXPECT_THROW(roc_auc_binary(scores, std::vector<int>{1, 1, 1, 1}), Error);
}

TEST(RocAucBinary, EqualsPairCountingOnRandomInstances) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 200)(rng);
    // Coarse scores so ties are common.
    const int levels = std::uniform_int_distribution<int>(2, 50)(rng);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = std::uniform_int_distribution<int>(0, levels)(rng) / static_cast<double>(levels);
      labels[i] = std::bernoulli_distribution(0.4)(rng) ? 1 : 0;
    }
    labels[0] = 0;
    labels[1] = 1;
    ASSERT_EQ(roc_auc_binary(scores, labels), oracle::pair_counting_auc(scores, labels)) << "trial " << trial;
  }
}

TEST(RocAucBinary, InvariantUnderIncreasingTransform) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> scores(60);
    std::vector<double> transformed(60);
    std::vector<int> labels(60);
    for (std::size_t i = 0; i < 60; ++i) {
      scores[i] = normal(rng);
      transformed[i] = std::exp(3.0 * scores[i]) + 7.0;
      labels[i] = i % 3 == 0 ? 1 : 0;
    }
    ASSERT_EQ(roc_auc_binary(scores, labels), roc_auc_binary(transformed, labels));
  }
}

TEST(RocAucMulticlass, TwoColumnsReduceToBinary) {
  const Matrix p = rows({{0.2, 0.8}, {0.6, 0.4}, {0.5, 0.5}, {0.9, 0.1}});
  const std::vector<int> y = {1, 1, 0, 0};
  EXPECT_EQ(roc_auc_multiclass(p, y), roc_auc_binary(std::vector<double>{0.8, 0.4, 0.5, 0.1}, y));
}

TEST(RocAucMulticlass, PerfectOneHotIsOne) {
  const Matrix p = rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 0}});
  EXPECT_EQ(roc_auc_multiclass(p, std::vector<int>{0, 1, 2, 0}), 1.0);
}

TEST(RocAucMulticlass, MatchesPerClassPairCountingOracle) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u;
  for (int trial = 0; trial < 50; ++trial) {
    Matrix p(30, 3);
    std::vector<int> y(30);
    for (Eigen::Index i = 0; i < 30; ++i) {
      for (Eigen::Index c = 0; c < 3; ++c) p(i, c) = std::round(u(rng) * 20.0) / 20.0;
      y[static_cast<std::size_t>(i)] = static_cast<int>(i % 3);
    }
    double expected = 0.0;
    for (int c = 0; c < 3; ++c) {
      std::vector<double> column(30);
      std::vector<int> is_c(30);
      for (std::size_t i = 0; i < 30; ++i) {
        column[i] = p(static_cast<Eigen::Index>(i), c);
        is_c[i] = y[i] == c ? 1 : 0;
      }
      expected += oracle::pair_counting_auc(column, is_c);
    }
    ASSERT_DOUBLE_EQ(roc_auc_multiclass(p, y), expected / 3.0);
  }
}

TEST(RocAucMulticlass, AbsentClassesAreSkipped) {
  // Class 2 never occurs, so only classes 0 and 1 are averaged.
  const Matrix p = rows({{0.7, 0.2, 0.1}, {0.1, 0.6, 0.3}, {0.4, 0.3, 0.3}});
  const std::vector<int> y = {0, 1, 1};
  const double c0 = oracle::pair_counting_auc(std::vector<double>{0.7, 0.1, 0.4}, std::vector<int>{1, 0, 0});
  const double c1 = oracle::pair_counting_auc(std::vector<double>{0.2, 0.6, 0.3}, std::vector<int>{0, 1, 1});
  EXPECT_DOUBLE_EQ(roc_auc_multiclass(p, y), (c0 + c1) / 2.0);
  EXPECT_THROW(roc_auc_multiclass(p, std::vector<int>{1, 1, 1}), Error);
}

// -- threshold metrics ---------------------------------------------------------------

TEST(Metrics, PerfectPredictions) {
  const Matrix p = rows({{1, 0}, {0, 1}, {1, 0}});
  const std::vector<int> y = {0, 1, 0};
  EXPECT_EQ(accuracy(p, y), 1.0);
  EXPECT_EQ(f1_macro(p, y), 1.0);
  EXPECT_NEAR(cross_entropy_metric(p, y), 0.0, 1e-14);
  EXPECT_EQ(ece(p, y), 0.0);
}

TEST(Metrics, F1HandExpanded) {
  // Class 1: TP=1, FP=1, FN=0 -> F1 = 2/(2+1) ; class 0 mirrored: TP=1, FP=0, FN=1 -> 2/3.
  const Matrix p = rows({{0.2, 0.8}, {0.3, 0.7}, {0.9, 0.1}});
  const std::vector<int> y = {1, 0, 0};
  const double f1_class1 = 2.0 * 1 / (2.0 * 1 + 1 + 0);
  const double f1_class0 = 2.0 * 1 / (2.0 * 1 + 0 + 1);
  EXPECT_DOUBLE_EQ(f1_macro(p, y), (f1_class0 + f1_class1) / 2.0);
  EXPECT_DOUBLE_EQ(accuracy(p, y), 2.0 / 3.0);
}

TEST(Metrics, F1ClassWithNoMembersContributesZero) {
  const Matrix p = rows({{0.9, 0.05, 0.05}, {0.1, 0.8, 0.1}});
  EXPECT_DOUBLE_EQ(f1_macro(p, std::vector<int>{0, 1}), 2.0 / 3.0);
}

TEST(Metrics, CrossEntropyIsFloored) {
  const Matrix p = rows({{1.0, 0.0}, {0.5, 0.5}});
  EXPECT_DOUBLE_EQ(cross_entropy_metric(p, std::vector<int>{1, 0}), 0.5 * (-std::log(1e-15) - std::log(0.5)));
}

TEST(Metrics, EceSingleBin) {
  Matrix p(4, 2);
  p << 0.9, 0.1, 0.9, 0.1, 0.1, 0.9, 0.1, 0.9;
  EXPECT_NEAR(ece(p, std::vector<int>{0, 1, 1, 0}), 0.4, 1e-12);
}

TEST(Metrics, EceZeroWhenCalibratedPerBin) {
  // Bin of confidence 0.75 with 3 of 4 correct, bin of 0.5 with 1 of 2 correct.
  Matrix p(6, 2);
  p << 0.75, 0.25, 0.75, 0.25, 0.75, 0.25, 0.75, 0.25, 0.5, 0.5, 0.5, 0.5;
  EXPECT_NEAR(ece(p, std::vector<int>{0, 0, 0, 1, 0, 1}), 0.0, 1e-15);
}

TEST(Metrics, EmptyInputRejected) {
  const Matrix p(0, 2);
  EXPECT_THROW(accuracy(p, std::vector<int>{}), Error);
  EXPECT_THROW(ece(p, std::vector<int>{}), Error);
}

TEST(Metrics, ComputeMetricsBounds) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix p(40, 4);
    std::vector<int> y(40);
    for (Eigen::Index i = 0; i < 40; ++i) {
      for (Eigen::Index c = 0; c < 4; ++c) p(i, c) = u(rng);
      p.row(i) /= p.row(i).sum();
      y[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 4);
    }
    const MetricSet m = compute_metrics(p, y);
    for (double v : {m.roc_auc, m.accuracy, m.f1_macro, m.ece}) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    ASSERT_GE(m.cross_entropy, 0.0);
  }
  EXPECT_TRUE(std::isnan(compute_metrics(rows({{0.4, 0.6}}), std::vector<int>{1}).roc_auc));
}

TEST(MetricNames, RoundTrip) {
  for (Metric m : kAllMetrics) EXPECT_EQ(parse_metric(to_string(m)), m);
  EXPECT_THROW(parse_metric("auc"), Error);
}

// -- normalization ---------------------------------------------------------------------

TEST(NormalizeScores, Examples) {
  const auto n = normalize_scores({{"A", 0.9}, {"B", 0.7}, {"C", 0.8}}, true);
  EXPECT_DOUBLE_EQ(n.at("A"), 1.0);
  EXPECT_DOUBLE_EQ(n.at("B"), 0.0);
  EXPECT_DOUBLE_EQ(n.at("C"), 0.5);
  const auto tied = normalize_scores({{"A", 0.3}, {"B", 0.3}}, true);
  EXPECT_EQ(tied.at("A"), 1.0);
  EXPECT_EQ(tied.at("B"), 1.0);
  const auto ce = normalize_scores({{"A", 0.2}, {"B", 0.6}, {"C", 0.3}}, false);
  EXPECT_DOUBLE_EQ(ce.at("A"), 1.0);
  EXPECT_DOUBLE_EQ(ce.at("B"), 0.0);
  EXPECT_DOUBLE_EQ(ce.at("C"), 0.75);
  EXPECT_THROW(normalize_scores({{"A", 1.0}}, true), Error);
}

TEST(NormalizeScores, BestStaysBestAndBounded) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u;
  for (int trial = 0; trial < 200; ++trial) {
    std::map<std::string, double> scores;
    for (int m = 0; m < 5; ++m) scores["m" + std::to_string(m)] = u(rng);
    for (bool higher : {true, false}) {
      const auto n = normalize_scores(scores, higher);
      auto best_raw = scores.begin();
      auto best_norm = n.begin();
      for (auto it = scores.begin(); it != scores.end(); ++it) {
        if (higher ? it->second > best_raw->second : it->second < best_raw->second) best_raw = it;
      }
      for (auto it = n.begin(); it != n.end(); ++it) {
        ASSERT_GE(it->second, 0.0);
        ASSERT_LE(it->second, 1.0);
        if (it->second > best_norm->second) best_norm = it;
      }
      ASSERT_EQ(best_raw->first, best_norm->first);
    }
  }
}

// -- Wilcoxon -----------------------------------------------------------------------------

TEST(Wilcoxon, FiveAllPositive) {
  const std::vector<double> a = {1.1, 2.2, 3.3, 4.4, 5.5};
  const std::vector<double> b = {1.0, 2.0, 3.0, 4.0, 5.0};
  const WilcoxonResult r = wilcoxon_signed_rank(a, b);
  EXPECT_EQ(r.n, 5u);
  EXPECT_EQ(r.w_plus, 15.0);
  EXPECT_TRUE(r.exact);
  EXPECT_EQ(r.p_value, 0.0625);
}

TEST(Wilcoxon, SymmetricPairGivesOne) {
  const WilcoxonResult r = wilcoxon_signed_rank(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 1.0});
  EXPECT_EQ(r.p_value, 1.0);
}

TEST(Wilcoxon, ZeroDifferencesAreDropped) {
  const WilcoxonResult r =
      wilcoxon_signed_rank(std::vector<double>{0, 0, 1, 2, 3}, std::vector<double>{0, 0, 0, 0, 0});
  EXPECT_EQ(r.n, 3u);
  EXPECT_EQ(r.p_value, 0.25);
  EXPECT_THROW(wilcoxon_signed_rank(std::vector<double>{1, 2}, std::vector<double>{1, 2}), Error);
}

TEST(Wilcoxon, RanksMatchQuadraticOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> values(std::uniform_int_distribution<std::size_t>(1, 30)(rng));
    for (auto& v : values) v = static_cast<double>(rng() % 8);
    ASSERT_EQ(signed_rank_ranks(values), oracle::quadratic_ranks(values));
  }
}

TEST(Wilcoxon, ExactBranchEqualsEnumeration) {
  std::mt19937_64 rng(77);
  for (std::size_t n = 1; n <= 12; ++n) {
    for (int trial = 0; trial < 25; ++trial) {
      std::vector<double> a(n);
      std::vector<double> b(n, 0.0);
      // Small integer magnitudes produce plenty of tied ranks.
      for (auto& x : a) x = static_cast<double>(static_cast<int>(rng() % 9) - 4) + (rng() % 2 ? 0.0 : 0.5);
      for (auto& x : a) {
        if (x == 0.0) x = 1.0;
      }
      const WilcoxonResult r = wilcoxon_signed_rank(a, b);
      std::vector<double> magnitudes;
      for (double x : a) magnitudes.push_back(std::abs(x));
      const auto ranks = oracle::quadratic_ranks(magnitudes);
      double w_plus = 0.0;
      for (std::size_t i = 0; i < n; ++i) w_plus += a[i] > 0 ? ranks[i] : 0.0;
      ASSERT_EQ(r.w_plus, w_plus);
      ASSERT_EQ(r.p_value, oracle::enumerated_wilcoxon_p(ranks, w_plus)) << "n " << n << " trial " << trial;
    }
  }
}

TEST(Wilcoxon, NormalApproximationCloseToExactAtTwenty) {
  std::mt19937_64 rng(15);
  std::normal_distribution<double> normal(0.3, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> d(20);
    for (auto& x : d) x = normal(rng);
    std::vector<double> magnitudes;
    double w_plus = 0.0;
    for (double x : d) magnitudes.push_back(std::abs(x));
    const auto ranks = signed_rank_ranks(magnitudes);
    for (std::size_t i = 0; i < d.size(); ++i) w_plus += d[i] > 0 ? ranks[i] : 0.0;
    ASSERT_NEAR(wilcoxon_normal_p(ranks, w_plus), wilcoxon_exact_p(ranks, w_plus), 0.01);
  }
}

TEST(Wilcoxon, LargeSamplesUseNormalApproximation) {
  std::vector<double> a(25);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<double>(i + 1);
  const WilcoxonResult r = wilcoxon_signed_rank(a, std::vector<double>(25, 0.0));
  EXPECT_FALSE(r.exact);
  const double mean = 25.0 * 26.0 / 4.0;
  const double sd = std::sqrt(25.0 * 26.0 * 51.0 / 24.0);
  EXPECT_NEAR(r.p_value, std::erfc((325.0 - mean - 0.5) / sd / std::sqrt(2.0)), 1e-15);
}

}  // namespace
}  // namespace tabcpt
