#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tabcpt/manifest.hpp"
#include "tabcpt/table.hpp"

namespace tabcpt {

// Train/eval contamination filter. Steps 1-4 are automated; step 5 (human
// inspection of dataset metadata) is served by carrying every dataset's
// metadata into the report.

enum class Rule { size, identity, feature_names, row_hash, column_hash };
enum class Verdict { exclude, review, pass };

const char* to_string(Rule rule);
const char* to_string(Verdict verdict);

struct ContaminationThresholds {
  std::size_t min_rows = 10000;         // train datasets must have strictly more rows
  double feature_jaccard_review = 0.8;  // feature-name Jaccard at or above -> review
  double hash_review = 0.2;             // row/column overlap at or above -> review
  double hash_exclude = 0.5;            // row/column overlap at or above -> exclude

  void validate() const;
};

struct Finding {
  std::string train_id;
  std::string eval_id;  // empty for size findings
  Rule rule = Rule::size;
  double score = 0.0;
  Verdict verdict = Verdict::pass;

  bool operator==(const Finding&) const = default;
};

struct IndexEntry {
  std::string id;
  std::string name;             // normalized
  std::string display_name;     // as declared
  std::string source;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::set<std::string> feature_names;  // normalized
  std::vector<std::uint64_t> row_hashes;     // sorted, unique
  std::vector<std::uint64_t> column_hashes;  // sorted, unique
};

/// Lower-cases and drops every character that is not a letter or digit.
std::string normalize_name(std::string_view name);

/// Lower-case alphanumeric runs of a name.
std::vector<std::string> name_tokens(std::string_view name);

/// Row digests over the sorted multiset of canonical cell strings (target
/// included), so column order and column names do not matter.
std::vector<std::uint64_t> hash_rows(const Table& table);

/// Column digests over each column's canonical cells in row order (target included).
std::vector<std::uint64_t> hash_columns(const Table& table);

/// |a ∩ b| / min(|a|, |b|) over sorted unique digests.
double overlap_score(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

IndexEntry index_dataset(const DatasetManifest& manifest, const Table& table);

Verdict size_filter(std::size_t rows, std::size_t min_rows = 10000);

Finding identity_cross_reference(const IndexEntry& train, const IndexEntry& eval);

Finding feature_name_overlap(const IndexEntry& train, const IndexEntry& eval, double review_threshold = 0.8);

Finding hash_overlap(const IndexEntry& train, const IndexEntry& eval, Rule rule,
                     const ContaminationThresholds& thresholds);

// A dataset plus its load outcome. Exactly one of `table` / `load_error` is set.
struct CorpusEntry {
  DatasetManifest manifest;
  std::optional<Table> table;
  std::string load_error;
};

std::vector<CorpusEntry> load_corpus(const std::vector<DatasetManifest>& manifests);

struct LoadFailure {
  std::string id;
  std::string side;  // "train" or "eval"
  std::string message;
};

struct ContaminationReport {
  std::vector<Finding> findings;  // non-pass only, most severe first
  std::vector<std::string> excluded_ids;
  std::vector<std::string> review_ids;
  std::vector<std::string> passed_ids;
  std::vector<LoadFailure> load_failures;
  std::vector<DatasetManifest> train_metadata;
  std::vector<DatasetManifest> eval_metadata;
  ContaminationThresholds thresholds;

  /// One JSON object per line: findings, then failures, then metadata and a summary record.
  std::string to_jsonl() const;
  std::string summary_text() const;
};

/// Runs size, identity, feature-name and row/column hash checks for every
/// (train, eval) pair. Datasets that fail to load are reported, never passed.
ContaminationReport scan_corpus(std::span<const CorpusEntry> train, std::span<const CorpusEntry> eval,
                                const ContaminationThresholds& thresholds);

}  // namespace tabcpt
