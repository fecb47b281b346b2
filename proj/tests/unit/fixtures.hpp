#pragma once

// Table, file and model fixtures shared by the unit tests and the acceptance
// checks. Nothing here depends on the test framework.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "tabcpt/manifest.hpp"
#include "tabcpt/model.hpp"
#include "tabcpt/table.hpp"

namespace tabcpt::testing {

namespace fs = std::filesystem;

inline void write_file(const fs::path& file, const std::string& text) {
  fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  out << text;
}

inline std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Numeric table with standard-normal features and labels from a fixed rule.
inline Table random_table(std::size_t rows, std::size_t cols, int classes, std::uint64_t seed,
                          const std::string& prefix = "x") {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Table t;
  t.name = prefix + "-table";
  t.target_name = "y";
  for (int c = 0; c < classes; ++c) t.class_names.push_back(std::to_string(c));
  for (std::size_t j = 0; j < cols; ++j) {
    Column column;
    column.name = prefix + std::to_string(j);
    column.values.resize(rows);
    column.missing.assign(rows, 0);
    for (double& v : column.values) v = normal(rng);
    t.columns.push_back(std::move(column));
  }
  std::uniform_int_distribution<int> label(0, classes - 1);
  t.target.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) t.target[i] = i < static_cast<std::size_t>(classes) ? static_cast<int>(i) : label(rng);
  return t;
}

inline std::string to_csv(const Table& t) {
  std::string out;
  for (const Column& c : t.columns) out += c.name + ",";
  out += t.target_name + "\n";
  for (std::size_t i = 0; i < t.n_rows(); ++i) {
    for (const Column& c : t.columns) out += c.canonical_cell(i) + ",";
    out += t.class_names[static_cast<std::size_t>(t.target[i])] + "\n";
  }
  return out;
}

// Writes the table as CSV next to `manifest_dir` and returns its manifest record.
inline DatasetManifest write_dataset(const fs::path& dir, const std::string& id, const std::string& name,
                                     const Table& t) {
  const fs::path file = dir / (id + ".csv");
  write_file(file, to_csv(t));
  return DatasetManifest{id, name, "test", file, t.target_name, t.n_rows(), t.n_cols() + 1};
}

inline void write_plain_manifest(const fs::path& file, const std::vector<DatasetManifest>& records) {
  std::string text;
  for (const auto& r : records) text += manifest_record_line(r) + "\n";
  write_file(file, text);
}

inline ModelConfig tiny_model(std::size_t features = 4, std::size_t d = 8, std::size_t layers = 1,
                              std::size_t heads = 2, std::size_t ff = 12) {
  ModelConfig c;
  c.max_features = features;
  c.embed_dim = d;
  c.layers = layers;
  c.heads = heads;
  c.ff_dim = ff;
  c.init_seed = 7;
  return c;
}

// Random batch with some missing cells and a feature width below the model's.
inline Batch random_batch(const ModelConfig& model, std::size_t n_context, std::size_t n_query, std::size_t width,
                          int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution missing(0.1);
  std::uniform_int_distribution<int> label(0, classes - 1);
  auto block = [&](std::size_t rows) {
    FeatureBlock b{Matrix(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(width)),
                   Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(width))};
    for (Eigen::Index i = 0; i < b.values.rows(); ++i) {
      for (Eigen::Index j = 0; j < b.values.cols(); ++j) {
        if (missing(rng)) {
          b.values(i, j) = 0.0;
          b.missing(i, j) = 1.0;
        } else {
          b.values(i, j) = normal(rng);
        }
      }
    }
    return b;
  };
  const FeatureBlock context = block(n_context);
  const FeatureBlock query = block(n_query);
  std::vector<int> cy(n_context);
  std::vector<int> qy(n_query);
  for (int& y : cy) y = label(rng);
  for (int& y : qy) y = label(rng);
  return make_batch(context, cy, query, qy, model.max_features);
}

// Copy of the batch keeping only the listed query rows.
inline Batch select_queries(const Batch& b, const std::vector<std::size_t>& keep) {
  Batch out = b;
  out.query_x.resize(static_cast<Eigen::Index>(keep.size()), b.query_x.cols());
  out.query_missing.resize(static_cast<Eigen::Index>(keep.size()), b.query_x.cols());
  out.query_y.clear();
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(keep[i]);
    out.query_x.row(static_cast<Eigen::Index>(i)) = b.query_x.row(r);
    out.query_missing.row(static_cast<Eigen::Index>(i)) = b.query_missing.row(r);
    if (!b.query_y.empty()) out.query_y.push_back(b.query_y[keep[i]]);
  }
  return out;
}

// Copy of the batch with its context rows shuffled.
inline Batch permute_context(const Batch& b, std::uint64_t seed) {
  std::vector<std::size_t> order(b.n_context());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(seed));
  Batch out = b;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto dst = static_cast<Eigen::Index>(i);
    const auto src = static_cast<Eigen::Index>(order[i]);
    out.context_x.row(dst) = b.context_x.row(src);
    out.context_missing.row(dst) = b.context_missing.row(src);
    out.context_y[i] = b.context_y[order[i]];
  }
  return out;
}

}  // namespace tabcpt::testing
