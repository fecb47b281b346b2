#pragma once

// Slow, obviously-correct reference computations shared by the unit tests and
// the acceptance checks.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <vector>

namespace tabcpt::oracle {

// Counts every (positive, negative) pair directly.
inline double pair_counting_auc(std::span<const double> scores, std::span<const int> labels) {
  double good = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) good += 1.0;
      if (scores[i] == scores[j]) good += 0.5;
    }
  }
  return good / pairs;
}

// Average 1-based ranks by comparing every pair: rank = 1 + #smaller + (#equal - 1) / 2.
inline std::vector<double> quadratic_ranks(std::span<const double> values) {
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    double smaller = 0.0;
    double equal = 0.0;
    for (double v : values) {
      smaller += v < values[i] ? 1.0 : 0.0;
      equal += v == values[i] ? 1.0 : 0.0;
    }
    ranks[i] = 1.0 + smaller + (equal - 1.0) / 2.0;
  }
  return ranks;
}

// Two-sided p of the signed-rank statistic by walking all 2^n sign patterns.
inline double enumerated_wilcoxon_p(std::span<const double> ranks, double w_plus) {
  const std::size_t n = ranks.size();
  double total = 0.0;
  for (double r : ranks) total += r;
  const double observed = std::abs(2.0 * w_plus - total);
  std::uint64_t extreme = 0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask >> i & 1U) w += ranks[i];
    }
    if (std::abs(2.0 * w - total) >= observed) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(std::uint64_t{1} << n);
}

}  // namespace tabcpt::oracle
