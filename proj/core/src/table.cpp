#include "tabcpt/table.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <iterator>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "tabcpt/error.hpp"
#include "tabcpt/manifest.hpp"
#include "tabcpt/random.hpp"

namespace tabcpt {

namespace {

constexpr const char* kMergedClassName = "<merged>";

std::string_view trim(std::string_view text) {
  constexpr std::string_view kSpace = " \t\r\n\f\v";
  const auto first = text.find_first_not_of(kSpace);
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(kSpace);
  return text.substr(first, last - first + 1);
}

std::string canonical_text(std::string_view text) {
  double value = 0.0;
  if (parse_finite(text, value)) return format_shortest(value);
  return std::string(text);
}

// RFC 4180 records. Returns the records together with the 1-based line each starts on.
std::vector<std::pair<std::size_t, std::vector<std::string>>> read_records(std::istream& in) {
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::pair<std::size_t, std::vector<std::string>>> records;

  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  bool record_has_content = false;
  std::size_t line = 1;
  std::size_t record_line = 1;

  auto end_record = [&] {
    fields.push_back(std::move(field));
    field.clear();
    if (record_has_content || fields.size() > 1) records.emplace_back(record_line, std::move(fields));
    fields.clear();
    record_has_content = false;
  };

  for (std::size_t i = 0; i < data.size(); ++i) {
    const char c = data[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < data.size() && data[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        record_has_content = true;
        break;
      case ',':
        fields.push_back(std::move(field));
        field.clear();
        record_has_content = true;
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        ++line;
        record_line = line;
        break;
      default:
        field.push_back(c);
        if (c != ' ' && c != '\t') record_has_content = true;
    }
  }
  if (in_quotes) throw input_error("unterminated quoted field starting on line " + std::to_string(record_line));
  if (record_has_content || !field.empty() || !fields.empty()) end_record();
  return records;
}

}  // namespace

const char* to_string(ColumnKind kind) { return kind == ColumnKind::numeric ? "numeric" : "categorical"; }

bool parse_finite(std::string_view text, double& out) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

std::string format_shortest(double value) {
  if (value == 0.0) value = 0.0;  // fold -0 into 0
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  if (ec != std::errc()) throw internal_error("to_chars failed");
  return std::string(buffer, ptr);
}

std::string Column::canonical_cell(std::size_t row) const {
  if (missing[row]) return {};
  if (!raw.empty()) return canonical_text(raw[row]);
  return format_shortest(values[row]);
}

std::string Table::canonical_target(std::size_t row) const {
  if (!target_raw.empty()) return canonical_text(target_raw[row]);
  return canonical_text(class_names[static_cast<std::size_t>(target[row])]);
}

Table Table::select_rows(std::span<const std::size_t> rows) const {
  Table out;
  out.name = name;
  out.target_name = target_name;
  out.class_names = class_names;
  out.columns.reserve(columns.size());
  for (const Column& column : columns) {
    Column c;
    c.name = column.name;
    c.kind = column.kind;
    c.values.reserve(rows.size());
    c.missing.reserve(rows.size());
    if (!column.raw.empty()) c.raw.reserve(rows.size());
    for (std::size_t r : rows) {
      c.values.push_back(column.values[r]);
      c.missing.push_back(column.missing[r]);
      if (!column.raw.empty()) c.raw.push_back(column.raw[r]);
    }
    out.columns.push_back(std::move(c));
  }
  out.target.reserve(rows.size());
  for (std::size_t r : rows) {
    out.target.push_back(target[r]);
    if (!target_raw.empty()) out.target_raw.push_back(target_raw[r]);
  }
  return out;
}

void Table::validate() const {
  const std::size_t n = n_rows();
  for (const Column& column : columns) {
    if (column.values.size() != n || column.missing.size() != n || (!column.raw.empty() && column.raw.size() != n)) {
      throw internal_error("table '" + name + "': column '" + column.name + "' has the wrong length");
    }
  }
  if (!target_raw.empty() && target_raw.size() != n) throw internal_error("table '" + name + "': target length");
  for (int y : target) {
    if (y < 0 || y >= n_classes()) throw internal_error("table '" + name + "': target out of range");
  }
}

Table parse_csv(std::istream& in, const std::string& name, const std::string& target_column) {
  auto records = read_records(in);
  if (records.empty()) throw input_error("dataset '" + name + "': empty file");
  const std::vector<std::string> header = records.front().second;
  const std::size_t width = header.size();

  std::size_t target_index = width;
  for (std::size_t j = 0; j < width; ++j) {
    if (trim(header[j]) == target_column) {
      target_index = j;
      break;
    }
  }
  if (target_index == width) {
    throw input_error("dataset '" + name + "': target column '" + target_column + "' not in header");
  }
  const std::size_t n = records.size() - 1;
  if (n == 0) throw input_error("dataset '" + name + "': no data rows");

  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].second.size() != width) {
      throw input_error("dataset '" + name + "': line " + std::to_string(records[i].first) + " has " +
                        std::to_string(records[i].second.size()) + " fields, header has " + std::to_string(width));
    }
  }

  Table table;
  table.name = name;
  table.target_name = std::string(trim(header[target_index]));

  for (std::size_t j = 0; j < width; ++j) {
    if (j == target_index) continue;
    Column column;
    column.name = std::string(trim(header[j]));
    column.raw.reserve(n);
    column.missing.reserve(n);
    column.values.reserve(n);
    bool numeric = true;
    for (std::size_t i = 1; i <= n; ++i) {
      const std::string_view cell = trim(records[i].second[j]);
      column.raw.emplace_back(cell);
      column.missing.push_back(cell.empty() ? 1 : 0);
      double value = std::nan("");
      if (!cell.empty() && !parse_finite(cell, value)) numeric = false;
      column.values.push_back(value);
    }
    column.kind = numeric ? ColumnKind::numeric : ColumnKind::categorical;
    if (!numeric) std::fill(column.values.begin(), column.values.end(), std::nan(""));
    table.columns.push_back(std::move(column));
  }

  table.target_raw.reserve(n);
  bool numeric_labels = true;
  for (std::size_t i = 1; i <= n; ++i) {
    const std::string_view cell = trim(records[i].second[target_index]);
    if (cell.empty()) {
      throw input_error("dataset '" + name + "': missing target on line " + std::to_string(records[i].first));
    }
    double ignored = 0.0;
    if (!parse_finite(cell, ignored)) numeric_labels = false;
    table.target_raw.emplace_back(cell);
  }

  std::vector<std::string> labels(table.target_raw);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  if (numeric_labels) {
    std::stable_sort(labels.begin(), labels.end(), [](const std::string& a, const std::string& b) {
      double x = 0.0, y = 0.0;
      parse_finite(a, x);
      parse_finite(b, y);
      return x < y;
    });
  }
  std::map<std::string, int> label_index;
  for (std::size_t c = 0; c < labels.size(); ++c) label_index[labels[c]] = static_cast<int>(c);
  table.class_names = labels;
  table.target.reserve(n);
  for (const std::string& label : table.target_raw) table.target.push_back(label_index.at(label));
  return table;
}

Table load_csv(const DatasetManifest& manifest) {
  std::ifstream in(manifest.path, std::ios::binary);
  if (!in) throw input_error("dataset '" + manifest.id + "': cannot open " + manifest.path.string());
  Table table = parse_csv(in, manifest.name.empty() ? manifest.id : manifest.name, manifest.target_column);
  const std::size_t cols = table.n_cols() + 1;
  if (table.n_rows() != manifest.rows || cols != manifest.cols) {
    std::ostringstream msg;
    msg << "dataset '" << manifest.id << "': declared shape (" << manifest.rows << ", " << manifest.cols
        << ") but file has (" << table.n_rows() << ", " << cols << ")";
    throw input_error(msg.str());
  }
  return table;
}

Table ordinal_encode(const Table& table) {
  Table out = table;
  for (Column& column : out.columns) {
    if (column.kind != ColumnKind::categorical || column.raw.empty()) continue;
    std::set<std::string> distinct;
    for (std::size_t i = 0; i < column.size(); ++i) {
      if (!column.missing[i]) distinct.insert(column.raw[i]);
    }
    std::map<std::string, double> code;
    double next = 0.0;
    for (const std::string& value : distinct) code.emplace(value, next++);
    for (std::size_t i = 0; i < column.size(); ++i) {
      column.values[i] = column.missing[i] ? -1.0 : code.at(column.raw[i]);
    }
  }
  return out;
}

Table merge_rare_classes(const Table& table) {
  if (table.n_rows() == 0) throw input_error("dataset '" + table.name + "': empty target");
  if (table.n_classes() <= static_cast<int>(10)) return table;

  std::vector<std::size_t> counts(table.class_names.size(), 0);
  for (int y : table.target) ++counts[static_cast<std::size_t>(y)];

  std::vector<std::size_t> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    return table.class_names[a] < table.class_names[b];
  });

  std::vector<int> remap(counts.size(), 9);
  Table out = table;
  out.class_names.clear();
  for (std::size_t rank = 0; rank < 9; ++rank) {
    remap[order[rank]] = static_cast<int>(rank);
    out.class_names.push_back(table.class_names[order[rank]]);
  }
  out.class_names.push_back(kMergedClassName);
  for (int& y : out.target) y = remap[static_cast<std::size_t>(y)];
  return out;
}

Table preprocess(const Table& table) { return merge_rare_classes(ordinal_encode(table)); }

std::size_t row_budget(std::size_t n_rows, std::size_t n_cols, const CapConfig& caps) {
  if (caps.max_rows < 1 || caps.max_cells < 1) throw config_error("row and cell caps must be at least 1");
  if (n_cols == 0) throw input_error("cannot cap a table without feature columns");
  const std::size_t by_cells = caps.max_cells / n_cols;
  if (by_cells == 0) {
    throw input_error("cell cap " + std::to_string(caps.max_cells) + " admits no row of " + std::to_string(n_cols) +
                      " columns");
  }
  return std::min({n_rows, caps.max_rows, by_cells});
}

std::vector<std::size_t> capped_rows(std::size_t n_rows, std::size_t n_cols, const CapConfig& caps,
                                     std::uint64_t seed) {
  const std::size_t budget = row_budget(n_rows, n_cols, caps);
  std::vector<std::size_t> rows(n_rows);
  std::iota(rows.begin(), rows.end(), 0);
  if (budget == n_rows) return rows;
  Rng rng(seed);
  // Partial Fisher-Yates: the first `budget` slots end up a uniform sample.
  for (std::size_t i = 0; i < budget; ++i) {
    std::swap(rows[i], rows[i + rng.below(n_rows - i)]);
  }
  rows.resize(budget);
  std::sort(rows.begin(), rows.end());
  return rows;
}

Table apply_caps(const Table& table, const CapConfig& caps, std::uint64_t seed) {
  const auto rows = capped_rows(table.n_rows(), table.n_cols(), caps, seed);
  if (rows.size() == table.n_rows()) return table;
  return table.select_rows(rows);
}

SplitIndices context_query_split(std::size_t n, double fraction, std::uint64_t seed) {
  if (n < 2) throw input_error("context/query split needs at least 2 rows, got " + std::to_string(n));
  if (!(fraction > 0.0 && fraction < 1.0)) throw config_error("context fraction must lie in (0, 1)");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(perm));
  // The relative nudge keeps products such as 0.6 * 10 from flooring to 5.
  auto n_context = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) * (1.0 + 1e-12)));
  n_context = std::clamp<std::size_t>(n_context, 1, n - 1);
  SplitIndices split;
  split.context.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_context));
  split.query.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_context), perm.end());
  return split;
}

FeatureBlock extract_features(const Table& table, std::span<const std::size_t> rows) {
  FeatureBlock block{Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(table.n_cols())),
                     Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(table.n_cols()))};
  for (std::size_t j = 0; j < table.n_cols(); ++j) {
    const Column& column = table.columns[j];
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t r = rows[i];
      const auto ii = static_cast<Eigen::Index>(i);
      const auto jj = static_cast<Eigen::Index>(j);
      if (column.missing[r]) {
        block.missing(ii, jj) = 1.0;
        continue;
      }
      const double value = column.values[r];
      if (!std::isfinite(value)) {
        throw internal_error("column '" + column.name + "' of '" + table.name + "' is not encoded");
      }
      block.values(ii, jj) = value;
    }
  }
  return block;
}

void znormalize(FeatureBlock& context, FeatureBlock& query) {
  const Eigen::Index cols = context.values.cols();
  for (Eigen::Index j = 0; j < cols; ++j) {
    double sum = 0.0;
    std::size_t count = 0;
    for (Eigen::Index i = 0; i < context.values.rows(); ++i) {
      if (context.missing(i, j) == 0.0) {
        sum += context.values(i, j);
        ++count;
      }
    }
    double mean = 0.0;
    double stddev = 0.0;
    if (count > 0) {
      mean = sum / static_cast<double>(count);
      double ss = 0.0;
      for (Eigen::Index i = 0; i < context.values.rows(); ++i) {
        if (context.missing(i, j) == 0.0) {
          const double d = context.values(i, j) - mean;
          ss += d * d;
        }
      }
      stddev = std::sqrt(ss / static_cast<double>(count));
    }
    const bool constant = count == 0 || stddev <= 1e-12 * std::max(1.0, std::abs(mean));
    for (FeatureBlock* block : {&context, &query}) {
      for (Eigen::Index i = 0; i < block->values.rows(); ++i) {
        double& x = block->values(i, j);
        x = (constant || block->missing(i, j) != 0.0) ? 0.0 : (x - mean) / stddev;
      }
    }
  }
}

}  // namespace tabcpt
