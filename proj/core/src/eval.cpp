#include "tabcpt/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "tabcpt/digest.hpp"
#include "tabcpt/error.hpp"
#include "tabcpt/random.hpp"

namespace tabcpt {

namespace {

using ojson = nlohmann::ordered_json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

MetricSet nan_metrics() {
  MetricSet m;
  for (Metric metric : kAllMetrics) set(m, metric, kNaN);
  return m;
}

ojson metrics_json(const MetricSet& m) {
  ojson out = ojson::object();
  for (Metric metric : kAllMetrics) {
    const double v = get(m, metric);
    if (std::isfinite(v)) {
      out[to_string(metric)] = v;
    } else {
      out[to_string(metric)] = nullptr;
    }
  }
  return out;
}

// Restricts the model's fixed-width output to the dataset's classes.
Matrix restrict_classes(const Matrix& proba, int n_classes) {
  if (proba.cols() < n_classes) throw input_error("predictor returned fewer columns than the dataset has classes");
  Matrix out = proba.leftCols(n_classes);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double total = out.row(i).sum();
    if (total > 0.0 && std::isfinite(total)) {
      out.row(i) /= total;
    } else {
      out.row(i).setConstant(1.0 / n_classes);
    }
  }
  return out;
}

void summarize_folds(DatasetEvaluation& d) {
  for (Metric metric : kAllMetrics) {
    std::vector<double> values;
    for (const MetricSet& fold : d.folds) {
      const double v = get(fold, metric);
      if (std::isfinite(v)) values.push_back(v);
    }
    if (values.empty()) {
      set(d.mean, metric, kNaN);
      set(d.std_error, metric, kNaN);
      continue;
    }
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    set(d.mean, metric, mean);
    set(d.std_error, metric, values.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0);
  }
}

double finite_mean(const std::vector<double>& values) {
  double total = 0.0;
  std::size_t n = 0;
  for (double v : values) {
    if (std::isfinite(v)) {
      total += v;
      ++n;
    }
  }
  return n == 0 ? kNaN : total / static_cast<double>(n);
}

std::string cell(double v) {
  if (!std::isfinite(v)) return "-";
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.3f", v);
  return buffer;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::vector<FoldSpec> stratified_kfold(const Table& table, const std::string& dataset_id, std::size_t k,
                                       std::uint64_t seed, std::vector<std::string>* warnings) {
  if (k < 2) throw input_error("k-fold needs k >= 2");
  const std::size_t n = table.n_rows();
  if (n < k) {
    throw input_error("dataset '" + dataset_id + "' has " + std::to_string(n) + " rows, fewer than " +
                      std::to_string(k) + " folds");
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(std::max(table.n_classes(), 1)));
  for (std::size_t i = 0; i < n; ++i) by_class.at(static_cast<std::size_t>(table.target[i])).push_back(i);

  Rng rng(seed);
  std::vector<std::size_t> fold_of(n, 0);
  std::size_t dealer = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& rows = by_class[c];
    if (rows.empty()) continue;
    if (rows.size() < k && warnings != nullptr) {
      warnings->push_back("dataset '" + dataset_id + "': class '" + table.class_names[c] + "' has " +
                          std::to_string(rows.size()) + " rows, fewer than " + std::to_string(k) +
                          " folds; some test folds lack it");
    }
    rng.shuffle(std::span<std::size_t>(rows));
    for (std::size_t row : rows) {
      fold_of[row] = dealer;
      dealer = (dealer + 1) % k;
    }
  }

  std::vector<FoldSpec> folds(k);
  for (std::size_t f = 0; f < k; ++f) {
    folds[f].dataset_id = dataset_id;
    folds[f].fold = f;
    folds[f].seed = seed;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < k; ++f) (fold_of[i] == f ? folds[f].test : folds[f].train).push_back(i);
  }
  return folds;
}

ModelEvaluation evaluate_predictor(const std::string& method, const Predictor& predictor, std::size_t max_features,
                                   std::span<const EvalDataset> suite, const EvalConfig& config) {
  if (config.folds < 2) throw config_error("evaluation needs at least 2 folds");
  std::vector<const EvalDataset*> ordered;
  for (const EvalDataset& d : suite) ordered.push_back(&d);
  std::sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    if (ordered[i]->id == ordered[i - 1]->id) throw input_error("duplicate evaluation dataset id '" + ordered[i]->id + "'");
  }

  ModelEvaluation result;
  result.method = method;
  for (const EvalDataset* dataset : ordered) {
    const Table table = preprocess(dataset->table);
    if (table.n_cols() == 0) throw input_error("evaluation dataset '" + dataset->id + "' has no feature columns");
    if (table.n_cols() > max_features) {
      throw input_error("evaluation dataset '" + dataset->id + "' has " + std::to_string(table.n_cols()) +
                        " features; the model accepts at most " + std::to_string(max_features));
    }
    const std::uint64_t dataset_seed = mix_seed(config.seed, digest64(dataset->id));
    const auto folds = stratified_kfold(table, dataset->id, config.folds, dataset_seed, &result.warnings);

    DatasetEvaluation evaluation;
    evaluation.dataset_id = dataset->id;
    for (const FoldSpec& fold : folds) {
      const auto kept = capped_rows(fold.train.size(), table.n_cols(), config.context_caps,
                                    mix_seed(dataset_seed, fold.fold));
      std::vector<std::size_t> context_rows;
      std::vector<int> context_y;
      for (std::size_t i : kept) {
        context_rows.push_back(fold.train[i]);
        context_y.push_back(table.target[fold.train[i]]);
      }
      std::vector<int> query_y;
      for (std::size_t row : fold.test) query_y.push_back(table.target[row]);

      const auto start = std::chrono::steady_clock::now();
      FeatureBlock context = extract_features(table, context_rows);
      FeatureBlock query = extract_features(table, fold.test);
      znormalize(context, query);
      const Batch batch = make_batch(context, context_y, query, query_y, max_features);
      const Matrix proba = restrict_classes(predictor(batch), table.n_classes());
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

      MetricSet metrics = compute_metrics(proba, query_y);
      metrics.time_seconds = config.record_timing ? seconds : kNaN;
      evaluation.folds.push_back(metrics);
    }
    summarize_folds(evaluation);
    result.datasets.push_back(std::move(evaluation));
  }
  return result;
}

ModelEvaluation evaluate_model(const std::string& method, const Checkpoint& checkpoint,
                               std::span<const EvalDataset> suite, const EvalConfig& config) {
  const Predictor predictor = [&](const Batch& batch) {
    return predict_proba(checkpoint.model, checkpoint.params, batch);
  };
  return evaluate_predictor(method, predictor, checkpoint.model.max_features, suite, config);
}

double mean_roc_auc(const ModelEvaluation& evaluation) {
  std::vector<double> values;
  for (const auto& d : evaluation.datasets) values.push_back(d.mean.roc_auc);
  return finite_mean(values);
}

BaselineScores parse_baselines(std::istream& in) {
  BaselineScores scores;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "baselines line " + std::to_string(line_no) + ": ";
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw input_error(where + "malformed JSON (" + e.what() + ")");
    }
    if (!record.is_object() || record.size() != 4 || !record.contains("method") || !record.contains("dataset_id") ||
        !record.contains("metric") || !record.contains("value")) {
      throw input_error(where + "expected exactly the keys method, dataset_id, metric, value");
    }
    if (!record["method"].is_string() || !record["dataset_id"].is_string() || !record["metric"].is_string() ||
        !record["value"].is_number()) {
      throw input_error(where + "method, dataset_id and metric must be strings and value a number");
    }
    const auto method = record["method"].get<std::string>();
    const auto dataset = record["dataset_id"].get<std::string>();
    const auto metric_name = record["metric"].get<std::string>();
    Metric metric;
    try {
      metric = parse_metric(metric_name);
    } catch (const Error& e) {
      throw input_error(where + e.what());
    }
    if (!seen.insert({method, dataset, metric_name}).second) {
      throw input_error(where + "duplicate entry for method '" + method + "', dataset '" + dataset + "', metric '" +
                        metric_name + "'");
    }
    auto& by_dataset = scores[method];
    auto it = by_dataset.find(dataset);
    if (it == by_dataset.end()) it = by_dataset.emplace(dataset, nan_metrics()).first;
    set(it->second, metric, record["value"].get<double>());
  }
  return scores;
}

BaselineScores read_baselines(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw input_error("cannot open baselines file " + file.string());
  return parse_baselines(in);
}

EvalReport aggregate_report(std::span<const ModelEvaluation> models, const BaselineScores& baselines,
                            std::vector<std::pair<std::string, std::string>> config_echo) {
  EvalReport report;
  std::vector<std::string> model_names;
  for (const ModelEvaluation& m : models) {
    model_names.push_back(m.method);
    for (const DatasetEvaluation& d : m.datasets) report.dataset_means[m.method][d.dataset_id] = d.mean;
  }
  std::sort(model_names.begin(), model_names.end());
  if (std::adjacent_find(model_names.begin(), model_names.end()) != model_names.end()) {
    throw input_error("two evaluated models share a method name");
  }
  for (const auto& [method, by_dataset] : baselines) {
    if (report.dataset_means.count(method) != 0) {
      throw input_error("baseline method '" + method + "' clashes with an evaluated model name");
    }
    report.dataset_means[method] = by_dataset;
  }
  report.methods = model_names;
  for (const auto& [method, by_dataset] : baselines) report.methods.push_back(method);
  if (report.methods.size() < 2) throw input_error("a report needs at least two methods");

  // Datasets scored by every method.
  for (const auto& [dataset, metrics] : report.dataset_means.at(report.methods.front())) {
    bool everywhere = true;
    for (const std::string& method : report.methods) everywhere = everywhere && report.dataset_means[method].count(dataset);
    if (everywhere) report.datasets.push_back(dataset);
  }
  if (report.datasets.empty()) throw input_error("the methods share no evaluated dataset");

  for (const std::string& method : report.methods) {
    for (const std::string& dataset : report.datasets) report.normalized[method][dataset] = nan_metrics();
  }
  for (const std::string& dataset : report.datasets) {
    for (Metric metric : kAllMetrics) {
      std::map<std::string, double> scores;
      for (const std::string& method : report.methods) {
        const double v = get(report.dataset_means[method][dataset], metric);
        if (std::isfinite(v)) scores[method] = v;
      }
      if (scores.size() < 2) continue;
      for (const auto& [method, value] : normalize_scores(scores, higher_is_better(metric))) {
        set(report.normalized[method][dataset], metric, value);
      }
    }
  }

  for (const std::string& method : report.methods) {
    MetricSet raw;
    MetricSet normalized;
    for (Metric metric : kAllMetrics) {
      std::vector<double> raw_values;
      std::vector<double> normalized_values;
      for (const std::string& dataset : report.datasets) {
        raw_values.push_back(get(report.dataset_means[method][dataset], metric));
        normalized_values.push_back(get(report.normalized[method][dataset], metric));
      }
      set(raw, metric, finite_mean(raw_values));
      set(normalized, metric, finite_mean(normalized_values));
    }
    report.mean_raw[method] = raw;
    report.mean_normalized[method] = normalized;
  }

  for (std::size_t i = 0; i < report.methods.size(); ++i) {
    for (std::size_t j = i + 1; j < report.methods.size(); ++j) {
      PairedTest test;
      test.method_a = report.methods[i];
      test.method_b = report.methods[j];
      std::vector<double> a;
      std::vector<double> b;
      for (const std::string& dataset : report.datasets) {
        const double x = report.dataset_means[test.method_a][dataset].roc_auc;
        const double y = report.dataset_means[test.method_b][dataset].roc_auc;
        if (std::isfinite(x) && std::isfinite(y)) {
          a.push_back(x);
          b.push_back(y);
        }
      }
      test.n_datasets = a.size();
      if (std::any_of(a.begin(), a.end(), [&, k = std::size_t{0}](double x) mutable { return x != b[k++]; })) {
        test.result = wilcoxon_signed_rank(a, b);
        test.defined = true;
      }
      report.wilcoxon.push_back(test);
    }
  }

  for (const ModelEvaluation& m : models) report.model_runs.push_back(m);
  std::sort(report.model_runs.begin(), report.model_runs.end(),
            [](const auto& a, const auto& b) { return a.method < b.method; });

  std::string pool;
  for (const std::string& method : report.methods) pool += (pool.empty() ? "" : ",") + method;
  config_echo.emplace_back("normalization_pool", pool);
  report.config_echo = std::move(config_echo);
  return report;
}

std::string EvalReport::to_jsonl() const {
  std::ostringstream out;
  auto emit = [&](const ojson& line) { out << line.dump() << '\n'; };
  for (const auto& [key, value] : config_echo) emit({{"type", "config"}, {"key", key}, {"value", value}});
  for (const ModelEvaluation& run : model_runs) {
    for (const DatasetEvaluation& d : run.datasets) {
      for (std::size_t f = 0; f < d.folds.size(); ++f) {
        emit({{"type", "fold"}, {"method", run.method}, {"dataset_id", d.dataset_id}, {"fold", f},
              {"metrics", metrics_json(d.folds[f])}});
      }
      emit({{"type", "fold_summary"}, {"method", run.method}, {"dataset_id", d.dataset_id},
            {"mean", metrics_json(d.mean)}, {"std_error", metrics_json(d.std_error)}});
    }
    for (const std::string& warning : run.warnings) emit({{"type", "warning"}, {"method", run.method}, {"message", warning}});
  }
  for (const std::string& method : methods) {
    for (const std::string& dataset : datasets) {
      emit({{"type", "dataset"}, {"method", method}, {"dataset_id", dataset},
            {"raw", metrics_json(dataset_means.at(method).at(dataset))},
            {"normalized", metrics_json(normalized.at(method).at(dataset))}});
    }
  }
  for (const std::string& method : methods) {
    emit({{"type", "summary"}, {"method", method}, {"n_datasets", datasets.size()},
          {"mean_normalized", metrics_json(mean_normalized.at(method))}, {"mean_raw", metrics_json(mean_raw.at(method))}});
  }
  for (const PairedTest& test : wilcoxon) {
    ojson line = {{"type", "wilcoxon"}, {"method_a", test.method_a}, {"method_b", test.method_b},
                  {"n_datasets", test.n_datasets}, {"defined", test.defined}};
    if (test.defined) {
      line["n_nonzero"] = test.result.n;
      line["w_plus"] = test.result.w_plus;
      line["p_value"] = test.result.p_value;
      line["exact"] = test.result.exact;
    }
    emit(line);
  }
  return out.str();
}

std::string EvalReport::to_table() const {
  static constexpr Metric kColumns[] = {Metric::roc_auc, Metric::accuracy, Metric::f1_macro, Metric::cross_entropy,
                                        Metric::ece};
  std::size_t name_width = 6;
  for (const std::string& method : methods) name_width = std::max(name_width, method.size());
  const std::size_t w = 7;

  std::ostringstream out;
  for (const auto& [key, value] : config_echo) out << key << ": " << value << '\n';
  out << "datasets: " << datasets.size() << "\n\n";
  out << pad("", name_width) << " | " << pad("normalized", 5 * w) << " | " << pad("raw", 5 * w) << " |\n";
  out << pad("method", name_width) << " | ";
  for (int block = 0; block < 2; ++block) {
    for (const char* h : {"ROC", "Acc.", "F1", "CE", "ECE"}) out << pad(h, w);
    out << " | ";
  }
  out << "time\n";
  out << std::string(name_width + 3 + 5 * w + 3 + 5 * w + 3 + 6, '-') << '\n';
  for (const std::string& method : methods) {
    out << pad(method, name_width) << " | ";
    for (Metric m : kColumns) out << pad(cell(get(mean_normalized.at(method), m)), w);
    out << " | ";
    for (Metric m : kColumns) out << pad(cell(get(mean_raw.at(method), m)), w);
    out << " | " << cell(mean_raw.at(method).time_seconds) << '\n';
  }
  if (!wilcoxon.empty()) {
    out << "\nWilcoxon signed-rank on per-dataset ROC-AUC (two-sided)\n";
    for (const PairedTest& test : wilcoxon) {
      out << "  " << test.method_a << " vs " << test.method_b << ": ";
      if (!test.defined) {
        out << "undefined (no nonzero differences over " << test.n_datasets << " datasets)\n";
        continue;
      }
      char buffer[96];
      std::snprintf(buffer, sizeof buffer, "p = %.4g, W+ = %g, n = %zu%s\n", test.result.p_value, test.result.w_plus,
                    test.result.n, test.result.exact ? " (exact)" : " (normal approx.)");
      out << buffer;
    }
  }
  return out.str();
}

const char* to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::context_size: return "context-size";
    case AblationKind::data_source: return "data-source";
  }
  return "?";
}

AblationKind parse_ablation_kind(const std::string& text) {
  if (text == "context-size") return AblationKind::context_size;
  if (text == "data-source") return AblationKind::data_source;
  throw config_error("unknown ablation kind '" + text + "' (expected context-size or data-source)");
}

void validate_ablation(AblationKind kind, std::span<const AblationArm> arms) {
  if (arms.size() < 2) throw config_error("an ablation needs at least two stage-2 configurations");
  std::set<std::string> labels;
  for (const AblationArm& arm : arms) {
    if (arm.label.empty() || arm.label == "base") throw config_error("arm labels must be non-empty and not 'base'");
    if (!labels.insert(arm.label).second) throw config_error("duplicate arm label '" + arm.label + "'");
    arm.config.validate();
  }
  const AblationArm& first = arms.front();
  for (std::size_t i = 0; i < arms.size(); ++i) {
    const AblationArm& arm = arms[i];
    if (kind == AblationKind::context_size) {
      TrainConfig same = arm.config;
      same.caps = first.config.caps;
      if (!(same == first.config) || arm.corpus_id != first.corpus_id) {
        throw config_error("arm '" + arm.label + "' differs from '" + first.label + "' in more than the context caps");
      }
    } else if (!(arm.config == first.config)) {
      throw config_error("arm '" + arm.label + "' differs from '" + first.label + "' in more than the corpus");
    }
    for (std::size_t j = 0; j < i; ++j) {
      const bool same_factor = kind == AblationKind::context_size ? arms[j].config.caps == arm.config.caps
                                                                  : arms[j].corpus_id == arm.corpus_id;
      if (same_factor) {
        throw config_error("arms '" + arms[j].label + "' and '" + arm.label + "' share the same " + to_string(kind) +
                           " setting");
      }
    }
  }
}

AblationReport run_ablation(AblationKind kind, const Checkpoint& base, std::span<const AblationArm> arms,
                            std::span<const EvalDataset> suite, const EvalConfig& eval_config) {
  validate_ablation(kind, arms);
  std::vector<ModelEvaluation> runs;
  runs.push_back(evaluate_model("base", base, suite, eval_config));
  for (const AblationArm& arm : arms) {
    const Checkpoint continued = continue_pretrain(base, arm.corpus, arm.config);
    runs.push_back(evaluate_model(arm.label, continued, suite, eval_config));
  }

  std::vector<std::pair<std::string, std::string>> echo{{"ablation", to_string(kind)}};
  for (const AblationArm& arm : arms) {
    echo.emplace_back("arm." + arm.label, "corpus=" + arm.corpus_id + " max_rows=" +
                                              std::to_string(arm.config.caps.max_rows) +
                                              " max_cells=" + std::to_string(arm.config.caps.max_cells));
  }
  AblationReport report;
  report.kind = kind;
  report.eval = aggregate_report(runs, {}, echo);
  report.base_mean_auc = mean_roc_auc(runs.front());
  const double base_normalized = report.eval.mean_normalized.at("base").roc_auc;
  for (std::size_t i = 0; i < arms.size(); ++i) {
    AblationDelta delta;
    delta.label = arms[i].label;
    delta.mean_auc = mean_roc_auc(runs[i + 1]);
    delta.delta_auc = delta.mean_auc - report.base_mean_auc;
    delta.delta_normalized_auc = report.eval.mean_normalized.at(arms[i].label).roc_auc - base_normalized;
    report.deltas.push_back(delta);
  }
  return report;
}

std::string AblationReport::to_jsonl() const {
  std::ostringstream out;
  out << ojson{{"type", "ablation"}, {"kind", to_string(kind)}, {"base_mean_auc", base_mean_auc}}.dump() << '\n';
  for (const AblationDelta& d : deltas) {
    out << ojson{{"type", "delta"},
                 {"label", d.label},
                 {"mean_auc", d.mean_auc},
                 {"delta_auc", d.delta_auc},
                 {"delta_normalized_auc", d.delta_normalized_auc}}
               .dump()
        << '\n';
  }
  out << eval.to_jsonl();
  return out.str();
}

std::string AblationReport::to_table() const {
  std::size_t width = 5;
  for (const AblationDelta& d : deltas) width = std::max(width, d.label.size());
  std::ostringstream out;
  out << "ablation: " << to_string(kind) << '\n';
  out << pad("arm", width) << "  " << pad("AUC", 8) << pad("dAUC", 9) << "dNormAUC\n";
  out << pad("base", width) << "  " << pad(cell(base_mean_auc), 8) << '\n';
  for (const AblationDelta& d : deltas) {
    char delta[32];
    char delta_norm[32];
    std::snprintf(delta, sizeof delta, "%+.4f", d.delta_auc);
    std::snprintf(delta_norm, sizeof delta_norm, "%+.4f", d.delta_normalized_auc);
    out << pad(d.label, width) << "  " << pad(cell(d.mean_auc), 8) << pad(delta, 9) << delta_norm << '\n';
  }
  out << '\n' << eval.to_table();
  return out.str();
}

}  // namespace tabcpt
