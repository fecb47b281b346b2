#include "tabcpt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

#include "tabcpt/error.hpp"

namespace tabcpt {

namespace {

void check_shapes(const Matrix& proba, std::span<const int> labels) {
  if (labels.empty()) throw input_error("metric over an empty prediction set");
  if (static_cast<std::size_t>(proba.rows()) != labels.size()) throw input_error("one probability row per label expected");
  for (int y : labels) {
    if (y < 0 || y >= proba.cols()) throw input_error("label outside the probability columns");
  }
}

Eigen::Index argmax_row(const Matrix& proba, Eigen::Index i) {
  Eigen::Index best = 0;
  proba.row(i).maxCoeff(&best);
  return best;
}

}  // namespace

double roc_auc_binary(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw input_error("one score per label expected");
  std::size_t positives = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw input_error("binary ROC-AUC needs 0/1 labels");
    positives += static_cast<std::size_t>(y);
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) throw input_error("ROC-AUC needs both classes present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Rank-sum form: positives' average ranks, ties sharing the mean rank.
  double positive_rank_sum = 0.0;
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start;
    std::size_t tied_positives = 0;
    while (end < order.size() && scores[order[end]] == scores[order[start]]) {
      tied_positives += static_cast<std::size_t>(labels[order[end]]);
      ++end;
    }
    const double mean_rank = 0.5 * static_cast<double>(start + 1 + end);
    positive_rank_sum += mean_rank * static_cast<double>(tied_positives);
    start = end;
  }
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

double roc_auc_multiclass(const Matrix& proba, std::span<const int> labels) {
  check_shapes(proba, labels);
  std::vector<std::size_t> counts(static_cast<std::size_t>(proba.cols()), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  const auto present = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
  if (present < 2) throw input_error("ROC-AUC needs at least two classes present");

  std::vector<double> column(labels.size());
  std::vector<int> is_class(labels.size());
  if (proba.cols() == 2) {
    for (std::size_t i = 0; i < labels.size(); ++i) column[i] = proba(static_cast<Eigen::Index>(i), 1);
    return roc_auc_binary(column, labels);
  }
  double total = 0.0;
  for (Eigen::Index c = 0; c < proba.cols(); ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) continue;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      column[i] = proba(static_cast<Eigen::Index>(i), c);
      is_class[i] = labels[i] == c ? 1 : 0;
    }
    total += roc_auc_binary(column, is_class);
  }
  return total / static_cast<double>(present);
}

double accuracy(const Matrix& proba, std::span<const int> labels) {
  check_shapes(proba, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    correct += argmax_row(proba, static_cast<Eigen::Index>(i)) == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double f1_macro(const Matrix& proba, std::span<const int> labels) {
  check_shapes(proba, labels);
  const auto k = static_cast<std::size_t>(proba.cols());
  std::vector<double> tp(k, 0.0), fp(k, 0.0), fn(k, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto predicted = static_cast<std::size_t>(argmax_row(proba, static_cast<Eigen::Index>(i)));
    const auto actual = static_cast<std::size_t>(labels[i]);
    if (predicted == actual) {
      tp[actual] += 1.0;
    } else {
      fp[predicted] += 1.0;
      fn[actual] += 1.0;
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const double denominator = 2.0 * tp[c] + fp[c] + fn[c];
    total += denominator > 0.0 ? 2.0 * tp[c] / denominator : 0.0;
  }
  return total / static_cast<double>(k);
}

double cross_entropy_metric(const Matrix& proba, std::span<const int> labels) {
  check_shapes(proba, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total -= std::log(std::max(proba(static_cast<Eigen::Index>(i), labels[i]), kProbabilityFloor));
  }
  return total / static_cast<double>(labels.size());
}

double ece(const Matrix& proba, std::span<const int> labels, std::size_t bins) {
  check_shapes(proba, labels);
  if (bins < 1) throw input_error("ECE needs at least one bin");
  std::vector<double> count(bins, 0.0), correct(bins, 0.0), confidence(bins, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const Eigen::Index predicted = argmax_row(proba, row);
    const double conf = proba(row, predicted);
    const auto bin = std::min(static_cast<std::size_t>(conf * static_cast<double>(bins)), bins - 1);
    count[bin] += 1.0;
    confidence[bin] += conf;
    correct[bin] += predicted == labels[i] ? 1.0 : 0.0;
  }
  double total = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0.0) continue;
    total += std::abs(correct[b] - confidence[b]);  // n_b * |acc_b - conf_b|
  }
  return total / static_cast<double>(labels.size());
}

const char* to_string(Metric metric) {
  switch (metric) {
    case Metric::roc_auc: return "roc_auc";
    case Metric::accuracy: return "accuracy";
    case Metric::f1_macro: return "f1_macro";
    case Metric::cross_entropy: return "cross_entropy";
    case Metric::ece: return "ece";
    case Metric::time: return "time";
  }
  return "?";
}

Metric parse_metric(const std::string& name) {
  for (Metric m : kAllMetrics) {
    if (name == to_string(m)) return m;
  }
  throw input_error("unknown metric '" + name + "'");
}

bool higher_is_better(Metric metric) {
  return metric == Metric::roc_auc || metric == Metric::accuracy || metric == Metric::f1_macro;
}

double get(const MetricSet& s, Metric metric) {
  switch (metric) {
    case Metric::roc_auc: return s.roc_auc;
    case Metric::accuracy: return s.accuracy;
    case Metric::f1_macro: return s.f1_macro;
    case Metric::cross_entropy: return s.cross_entropy;
    case Metric::ece: return s.ece;
    case Metric::time: return s.time_seconds;
  }
  return 0.0;
}

void set(MetricSet& s, Metric metric, double value) {
  switch (metric) {
    case Metric::roc_auc: s.roc_auc = value; break;
    case Metric::accuracy: s.accuracy = value; break;
    case Metric::f1_macro: s.f1_macro = value; break;
    case Metric::cross_entropy: s.cross_entropy = value; break;
    case Metric::ece: s.ece = value; break;
    case Metric::time: s.time_seconds = value; break;
  }
}

MetricSet compute_metrics(const Matrix& proba, std::span<const int> labels) {
  MetricSet m;
  std::vector<bool> seen(static_cast<std::size_t>(proba.cols()), false);
  for (int y : labels) {
    if (y >= 0 && y < proba.cols()) seen[static_cast<std::size_t>(y)] = true;
  }
  const bool two_classes = std::count(seen.begin(), seen.end(), true) >= 2;
  m.roc_auc = two_classes ? roc_auc_multiclass(proba, labels) : std::numeric_limits<double>::quiet_NaN();
  m.accuracy = accuracy(proba, labels);
  m.f1_macro = f1_macro(proba, labels);
  m.cross_entropy = cross_entropy_metric(proba, labels);
  m.ece = ece(proba, labels);
  return m;
}

std::map<std::string, double> normalize_scores(const std::map<std::string, double>& scores, bool higher_better) {
  if (scores.size() < 2) throw input_error("normalization needs at least two methods");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& [method, score] : scores) {
    lo = std::min(lo, score);
    hi = std::max(hi, score);
  }
  std::map<std::string, double> out;
  for (const auto& [method, score] : scores) {
    if (hi == lo) {
      out[method] = 1.0;
    } else {
      out[method] = higher_better ? (score - lo) / (hi - lo) : (hi - score) / (hi - lo);
    }
  }
  return out;
}

std::vector<double> signed_rank_ranks(std::span<const double> abs_differences) {
  const std::size_t n = abs_differences.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return abs_differences[a] < abs_differences[b]; });
  std::vector<double> ranks(n);
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start;
    while (end < n && abs_differences[order[end]] == abs_differences[order[start]]) ++end;
    const double mean_rank = 0.5 * static_cast<double>(start + 1 + end);
    for (std::size_t i = start; i < end; ++i) ranks[order[i]] = mean_rank;
    start = end;
  }
  return ranks;
}

double wilcoxon_exact_p(std::span<const double> ranks, double w_plus) {
  // Average ranks are multiples of 1/2, so doubled ranks are integers and the
  // null distribution can be counted exactly.
  std::vector<std::int64_t> doubled;
  std::int64_t total = 0;
  for (double r : ranks) {
    doubled.push_back(std::llround(2.0 * r));
    total += doubled.back();
  }
  std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
  ways[0] = 1.0;
  std::int64_t reach = 0;
  for (std::int64_t r : doubled) {
    for (std::int64_t s = reach; s >= 0; --s) ways[static_cast<std::size_t>(s + r)] += ways[static_cast<std::size_t>(s)];
    reach += r;
  }
  const std::int64_t observed = std::llround(2.0 * w_plus);
  const std::int64_t deviation = std::llabs(2 * observed - total);
  double tail = 0.0;
  for (std::int64_t s = 0; s <= total; ++s) {
    if (std::llabs(2 * s - total) >= deviation) tail += ways[static_cast<std::size_t>(s)];
  }
  return std::min(1.0, tail / std::ldexp(1.0, static_cast<int>(ranks.size())));
}

double wilcoxon_normal_p(std::span<const double> ranks, double w_plus) {
  const auto n = static_cast<double>(ranks.size());
  const double mean = n * (n + 1.0) / 4.0;
  double variance = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
  std::vector<double> sorted(ranks.begin(), ranks.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t start = 0; start < sorted.size();) {
    std::size_t end = start;
    while (end < sorted.size() && sorted[end] == sorted[start]) ++end;
    const auto t = static_cast<double>(end - start);
    variance -= (t * t * t - t) / 48.0;
    start = end;
  }
  if (variance <= 0.0) return 1.0;
  const double z = std::max(0.0, std::abs(w_plus - mean) - 0.5) / std::sqrt(variance);
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw input_error("Wilcoxon test needs paired samples of equal length");
  std::vector<double> magnitudes;
  std::vector<bool> positive;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d == 0.0) continue;
    magnitudes.push_back(std::abs(d));
    positive.push_back(d > 0.0);
  }
  if (magnitudes.empty()) throw input_error("Wilcoxon test undefined: every paired difference is zero");
  const auto ranks = signed_rank_ranks(magnitudes);
  WilcoxonResult result;
  result.n = ranks.size();
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (positive[i]) result.w_plus += ranks[i];
  }
  result.exact = result.n <= kWilcoxonExactMax;
  result.p_value = result.exact ? wilcoxon_exact_p(ranks, result.w_plus) : wilcoxon_normal_p(ranks, result.w_plus);
  return result;
}

}  // namespace tabcpt
