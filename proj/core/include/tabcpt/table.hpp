#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace tabcpt {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct DatasetManifest;

enum class ColumnKind { numeric, categorical };

const char* to_string(ColumnKind kind);

// One feature column. `raw` keeps the original cell text when the column came
// from a file; synthetic columns leave it empty and render from `values`.
struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  std::vector<double> values;          // numeric value, or ordinal code once encoded (-1 = missing)
  std::vector<std::uint8_t> missing;   // 1 where the cell is missing
  std::vector<std::string> raw;        // trimmed source text, may be empty

  std::size_t size() const { return missing.size(); }

  /// Canonical text of a cell: trimmed source string, numerics in shortest
  /// round-trip decimal form, empty string for missing cells.
  std::string canonical_cell(std::size_t row) const;
};

struct Table {
  std::string name;
  std::vector<Column> columns;           // features only
  std::string target_name;
  std::vector<int> target;               // class index per row, in [0, n_classes)
  std::vector<std::string> class_names;  // label text of each class index
  std::vector<std::string> target_raw;   // trimmed source text of the target cells, may be empty

  std::size_t n_rows() const { return target.size(); }
  std::size_t n_cols() const { return columns.size(); }
  int n_classes() const { return static_cast<int>(class_names.size()); }

  std::string canonical_target(std::size_t row) const;

  /// New table holding the given rows, in the given order.
  Table select_rows(std::span<const std::size_t> rows) const;

  /// Throws if column lengths disagree or targets fall outside [0, n_classes).
  void validate() const;
};

struct SplitIndices {
  std::vector<std::size_t> context;
  std::vector<std::size_t> query;
};

// Dense feature view of a set of rows. Missing cells hold 0 in `values` and
// 1 in `missing`.
struct FeatureBlock {
  Matrix values;
  Matrix missing;
};

struct CapConfig {
  std::size_t max_rows = 20000;
  std::size_t max_cells = 400000;

  bool operator==(const CapConfig&) const = default;
};

/// Parses one finite decimal number; returns false on anything else.
bool parse_finite(std::string_view text, double& out);

/// Shortest round-trip decimal rendering.
std::string format_shortest(double value);

// -- loading ---------------------------------------------------------------

/// Reads a CSV stream (header row, comma delimiter, RFC 4180 quoting, empty
/// cell = missing). A column is numeric iff every non-missing cell parses as a
/// finite number. Target labels are indexed in sorted order: numerically when
/// every label is a number, lexicographically otherwise.
Table parse_csv(std::istream& in, const std::string& name, const std::string& target_column);

/// Loads `manifest.path` and checks the declared shape (rows, total CSV columns).
Table load_csv(const DatasetManifest& manifest);

// -- preprocessing -----------------------------------------------------------

/// Maps each categorical column's distinct values to 0..k-1 in lexicographic
/// order of their text. Numeric columns are untouched. Idempotent.
Table ordinal_encode(const Table& table);

/// With more than ten classes, keeps the nine most frequent (ties broken by
/// lexicographic label) as codes 0..8 and merges everything else into code 9.
Table merge_rare_classes(const Table& table);

/// ordinal_encode followed by merge_rare_classes.
Table preprocess(const Table& table);

/// min(n_rows, max_rows, floor(max_cells / n_cols)).
std::size_t row_budget(std::size_t n_rows, std::size_t n_cols, const CapConfig& caps);

/// Row indices kept by the caps, sampled uniformly without replacement and
/// returned in ascending order. All rows when already under budget.
std::vector<std::size_t> capped_rows(std::size_t n_rows, std::size_t n_cols, const CapConfig& caps,
                                     std::uint64_t seed);

Table apply_caps(const Table& table, const CapConfig& caps, std::uint64_t seed);

/// Random permutation of 0..n-1; the first floor(fraction * n) entries form the context.
SplitIndices context_query_split(std::size_t n, double fraction, std::uint64_t seed);

/// Gathers the feature values of the given rows of an encoded table.
FeatureBlock extract_features(const Table& table, std::span<const std::size_t> rows);

/// Standardizes both blocks with per-column statistics taken from the
/// non-missing context cells. Zero-variance columns become 0, as do missing cells.
void znormalize(FeatureBlock& context, FeatureBlock& query);

}  // namespace tabcpt
