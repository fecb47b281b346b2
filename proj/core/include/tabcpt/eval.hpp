#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tabcpt/checkpoint.hpp"
#include "tabcpt/metrics.hpp"
#include "tabcpt/model.hpp"
#include "tabcpt/table.hpp"
#include "tabcpt/train.hpp"

namespace tabcpt {

struct FoldSpec {
  std::string dataset_id;
  std::size_t fold = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

/// Class-stratified k-fold partition. Each class's rows are shuffled and dealt
/// round-robin, the dealer position carrying over between classes so fold
/// sizes stay balanced. Classes with fewer than k rows produce a warning.
std::vector<FoldSpec> stratified_kfold(const Table& table, const std::string& dataset_id, std::size_t k,
                                       std::uint64_t seed, std::vector<std::string>* warnings = nullptr);

struct EvalDataset {
  std::string id;
  Table table;
};

struct EvalConfig {
  std::size_t folds = 10;
  CapConfig context_caps;     // applied to each fold's training rows
  std::uint64_t seed = 0;
  bool record_timing = false;  // wall time breaks byte-stable reports, so it is opt-in

  bool operator==(const EvalConfig&) const = default;
};

struct DatasetEvaluation {
  std::string dataset_id;
  std::vector<MetricSet> folds;
  MetricSet mean;
  MetricSet std_error;
};

struct ModelEvaluation {
  std::string method;
  std::vector<DatasetEvaluation> datasets;  // sorted by id
  std::vector<std::string> warnings;
};

// Maps a batch to n_query x n_classes_out probabilities.
using Predictor = std::function<Matrix(const Batch&)>;

/// 10-fold protocol for any predictor: fold training rows become the context,
/// test rows the queries. Probabilities are restricted to the dataset's
/// classes and renormalized before scoring. No tuning of any kind.
ModelEvaluation evaluate_predictor(const std::string& method, const Predictor& predictor, std::size_t max_features,
                                   std::span<const EvalDataset> suite, const EvalConfig& config);

ModelEvaluation evaluate_model(const std::string& method, const Checkpoint& checkpoint,
                               std::span<const EvalDataset> suite, const EvalConfig& config);

/// Mean over datasets of the per-dataset fold-mean ROC-AUC.
double mean_roc_auc(const ModelEvaluation& evaluation);

// method -> dataset id -> metrics. Metrics absent from the file are NaN.
using BaselineScores = std::map<std::string, std::map<std::string, MetricSet>>;

/// JSON Lines, one {"method", "dataset_id", "metric", "value"} object per line.
/// Metric names: roc_auc, accuracy, f1_macro, cross_entropy, ece, time.
/// A repeated (method, dataset_id, metric) triple is an input error.
BaselineScores parse_baselines(std::istream& in);
BaselineScores read_baselines(const std::filesystem::path& file);

struct PairedTest {
  std::string method_a;
  std::string method_b;
  std::size_t n_datasets = 0;
  WilcoxonResult result;
  bool defined = false;  // false when every paired difference is zero
};

struct EvalReport {
  std::vector<std::string> methods;   // models first, then baselines, each sorted
  std::vector<std::string> datasets;  // datasets scored by every method
  std::vector<ModelEvaluation> model_runs;
  std::map<std::string, std::map<std::string, MetricSet>> dataset_means;
  std::map<std::string, std::map<std::string, MetricSet>> normalized;
  std::map<std::string, MetricSet> mean_raw;
  std::map<std::string, MetricSet> mean_normalized;
  std::vector<PairedTest> wilcoxon;  // on per-dataset ROC-AUC
  std::vector<std::pair<std::string, std::string>> config_echo;

  std::string to_jsonl() const;
  /// Aligned table: mean normalized ROC, Acc., F1, CE, ECE | mean raw ditto | time.
  std::string to_table() const;
};

/// Normalizes every metric per dataset across all supplied methods, averages,
/// and runs pairwise Wilcoxon tests on per-dataset ROC-AUC.
EvalReport aggregate_report(std::span<const ModelEvaluation> models, const BaselineScores& baselines,
                            std::vector<std::pair<std::string, std::string>> config_echo = {});

// -- ablations -----------------------------------------------------------------

enum class AblationKind { context_size, data_source };

const char* to_string(AblationKind kind);
AblationKind parse_ablation_kind(const std::string& text);

struct AblationArm {
  std::string label;
  TrainConfig config;
  std::string corpus_id;
  std::vector<Table> corpus;
};

/// Arms must differ only in the ablated factor (caps for context-size, corpus
/// for data-source), and no two arms may share a value of it.
void validate_ablation(AblationKind kind, std::span<const AblationArm> arms);

struct AblationDelta {
  std::string label;
  double mean_auc = 0.0;
  double delta_auc = 0.0;              // vs base
  double delta_normalized_auc = 0.0;   // vs base, normalized over base + arms
};

struct AblationReport {
  AblationKind kind = AblationKind::context_size;
  double base_mean_auc = 0.0;
  std::vector<AblationDelta> deltas;  // in arm order
  EvalReport eval;

  std::string to_jsonl() const;
  std::string to_table() const;
};

/// Continues `base` once per arm, evaluates base and every arm on the same
/// suite and seeds, and reports each arm's gain over the base.
AblationReport run_ablation(AblationKind kind, const Checkpoint& base, std::span<const AblationArm> arms,
                            std::span<const EvalDataset> suite, const EvalConfig& eval_config);

}  // namespace tabcpt
