#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tabcpt/table.hpp"

namespace tabcpt {

/// Mann-Whitney form of the binary ROC-AUC: fraction of (positive, negative)
/// pairs ordered correctly, ties counted one half. Labels are 0/1.
double roc_auc_binary(std::span<const double> scores, std::span<const int> labels);

/// Macro one-vs-rest average over the classes present in `labels`.
/// With two columns this reduces to the binary AUC of column 1.
double roc_auc_multiclass(const Matrix& proba, std::span<const int> labels);

double accuracy(const Matrix& proba, std::span<const int> labels);

/// Unweighted mean of per-class F1 over all probability columns. A class with
/// an undefined F1 (no true and no predicted members) contributes 0.
double f1_macro(const Matrix& proba, std::span<const int> labels);

inline constexpr double kProbabilityFloor = 1e-15;

double cross_entropy_metric(const Matrix& proba, std::span<const int> labels);

/// Expected calibration error over equal-width bins of the top-class confidence.
double ece(const Matrix& proba, std::span<const int> labels, std::size_t bins = 10);

struct MetricSet {
  double roc_auc = 0.0;
  double accuracy = 0.0;
  double f1_macro = 0.0;
  double cross_entropy = 0.0;
  double ece = 0.0;
  double time_seconds = 0.0;

  bool operator==(const MetricSet&) const = default;
};

enum class Metric { roc_auc, accuracy, f1_macro, cross_entropy, ece, time };

inline constexpr Metric kAllMetrics[] = {Metric::roc_auc,       Metric::accuracy, Metric::f1_macro,
                                         Metric::cross_entropy, Metric::ece,      Metric::time};

const char* to_string(Metric metric);
Metric parse_metric(const std::string& name);
bool higher_is_better(Metric metric);
double get(const MetricSet& set, Metric metric);
void set(MetricSet& set, Metric metric, double value);

/// All metrics of one fold. ROC-AUC is NaN when fewer than two classes are present.
MetricSet compute_metrics(const Matrix& proba, std::span<const int> labels);

/// Per-dataset min-max scaling so the best method maps to 1 and the worst to 0.
/// When every method ties, all get 1.
std::map<std::string, double> normalize_scores(const std::map<std::string, double>& scores, bool higher_better);

// Wilcoxon signed-rank test on paired samples. Zero differences are dropped,
// tied magnitudes share their average rank.
struct WilcoxonResult {
  std::size_t n = 0;        // nonzero differences
  double w_plus = 0.0;      // rank sum of positive differences
  double p_value = 1.0;     // two-sided
  bool exact = true;
};

inline constexpr std::size_t kWilcoxonExactMax = 20;

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

/// Exact two-sided p-value from the null distribution of W+ over all sign
/// assignments of `ranks` (average ranks, possibly halves).
double wilcoxon_exact_p(std::span<const double> ranks, double w_plus);

/// Normal approximation with tie and continuity correction.
double wilcoxon_normal_p(std::span<const double> ranks, double w_plus);

/// Average ranks (1-based) of the absolute values.
std::vector<double> signed_rank_ranks(std::span<const double> abs_differences);

}  // namespace tabcpt
