#include "tabcpt/prior.hpp"

#include <algorithm>
#include <cmath>

#include "tabcpt/error.hpp"
#include "tabcpt/random.hpp"

namespace tabcpt {

namespace {

constexpr int kMaxAttempts = 100;
constexpr std::size_t kMlpHidden = 16;

struct TreeNode {
  std::size_t feature = 0;
  double threshold = 0.0;
  int left = -1;  // child indices; -1 marks a leaf
  int right = -1;
  int label = 0;
};

int grow_tree(std::vector<TreeNode>& nodes, Rng& rng, std::size_t n_features, int n_classes, int depth) {
  const int id = static_cast<int>(nodes.size());
  nodes.emplace_back();
  if (depth == 0) {
    nodes[static_cast<std::size_t>(id)].label = static_cast<int>(rng.below(static_cast<std::size_t>(n_classes)));
    return id;
  }
  nodes[static_cast<std::size_t>(id)].feature = rng.below(n_features);
  nodes[static_cast<std::size_t>(id)].threshold = rng.normal(0.0, 0.7);
  const int left = grow_tree(nodes, rng, n_features, n_classes, depth - 1);
  const int right = grow_tree(nodes, rng, n_features, n_classes, depth - 1);
  nodes[static_cast<std::size_t>(id)].left = left;
  nodes[static_cast<std::size_t>(id)].right = right;
  return id;
}

std::vector<int> label_linear(const Matrix& x, int n_classes, double noise, Rng& rng) {
  const auto f = x.cols();
  Matrix w(f, n_classes);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  Eigen::RowVectorXd b(n_classes);
  for (Eigen::Index c = 0; c < n_classes; ++c) b(c) = rng.normal(0.0, 0.5);
  Matrix logits = x * w;
  logits.rowwise() += b;
  std::vector<int> y(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 0; c < n_classes; ++c) logits(i, c) += noise * rng.normal();
    logits.row(i).maxCoeff(&best);
    y[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return y;
}

std::vector<int> label_mlp(const Matrix& x, int n_classes, double noise, Rng& rng) {
  const auto f = x.cols();
  const auto h = static_cast<Eigen::Index>(kMlpHidden);
  Matrix w1(f, h);
  Matrix w2(h, n_classes);
  for (Eigen::Index i = 0; i < w1.size(); ++i) w1.data()[i] = rng.normal(0.0, 1.5 / std::sqrt(static_cast<double>(f)));
  for (Eigen::Index i = 0; i < w2.size(); ++i) w2.data()[i] = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(h)));
  Eigen::RowVectorXd b1(h);
  for (Eigen::Index j = 0; j < h; ++j) b1(j) = rng.normal(0.0, 0.5);
  Matrix hidden = x * w1;
  hidden.rowwise() += b1;
  hidden = hidden.array().tanh();
  Matrix logits = hidden * w2;
  std::vector<int> y(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 0; c < n_classes; ++c) logits(i, c) += noise * rng.normal();
    logits.row(i).maxCoeff(&best);
    y[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return y;
}

std::vector<int> label_tree(const Matrix& x, int n_classes, double noise, Rng& rng) {
  std::vector<TreeNode> nodes;
  const int depth = static_cast<int>(rng.between(2, 4));
  grow_tree(nodes, rng, static_cast<std::size_t>(x.cols()), n_classes, depth);
  std::vector<int> y(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::size_t node = 0;
    while (nodes[node].left >= 0) {
      const bool go_left = x(i, static_cast<Eigen::Index>(nodes[node].feature)) < nodes[node].threshold;
      node = static_cast<std::size_t>(go_left ? nodes[node].left : nodes[node].right);
    }
    int label = nodes[node].label;
    if (noise > 0.0 && rng.uniform() < noise) label = static_cast<int>(rng.below(static_cast<std::size_t>(n_classes)));
    y[static_cast<std::size_t>(i)] = label;
  }
  return y;
}

}  // namespace

const char* to_string(PriorFamily family) {
  switch (family) {
    case PriorFamily::random_linear: return "random-linear";
    case PriorFamily::random_mlp: return "random-mlp";
    case PriorFamily::random_tree: return "random-tree";
  }
  return "?";
}

PriorFamily parse_prior_family(const std::string& text) {
  if (text == "random-linear") return PriorFamily::random_linear;
  if (text == "random-mlp") return PriorFamily::random_mlp;
  if (text == "random-tree") return PriorFamily::random_tree;
  throw config_error("unknown prior family '" + text + "'");
}

void PriorConfig::validate() const {
  if (max_features < 1) throw config_error("prior max_features must be at least 1");
  if (max_classes < 2 || max_classes > 10) throw config_error("prior max_classes must lie in [2, 10]");
  if (min_rows < 2 || min_rows > max_rows) throw config_error("prior row range must satisfy 2 <= min_rows <= max_rows");
  if (!(noise >= 0.0)) throw config_error("prior noise must be non-negative");
  if (!(min_class_fraction >= 0.0 && min_class_fraction < 0.5)) {
    throw config_error("prior min_class_fraction must lie in [0, 0.5)");
  }
}

SyntheticTask sample_task(const PriorConfig& config, std::size_t index) {
  config.validate();
  const std::uint64_t task_seed = mix_seed(config.seed, index);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(mix_seed(task_seed, static_cast<std::uint64_t>(attempt)));
    const std::size_t n_features = rng.between(1, config.max_features);
    const int n_classes = static_cast<int>(rng.between(2, static_cast<std::size_t>(config.max_classes)));
    const std::size_t n_rows = rng.between(config.min_rows, config.max_rows);

    Matrix x(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(n_features));
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();

    std::vector<int> y;
    switch (config.family) {
      case PriorFamily::random_linear: y = label_linear(x, n_classes, config.noise, rng); break;
      case PriorFamily::random_mlp: y = label_mlp(x, n_classes, config.noise, rng); break;
      case PriorFamily::random_tree: y = label_tree(x, n_classes, config.noise, rng); break;
    }

    // Keep only the classes that occur, in their original order.
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
    for (int label : y) ++counts[static_cast<std::size_t>(label)];
    const double floor = std::ceil(config.min_class_fraction * static_cast<double>(n_rows));
    std::vector<int> remap(static_cast<std::size_t>(n_classes), -1);
    int present = 0;
    bool sliver = false;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] == 0) continue;
      if (static_cast<double>(counts[c]) < floor) sliver = true;
      remap[c] = present++;
    }
    if (present < 2 || sliver) continue;

    SyntheticTask task;
    task.family = config.family;
    task.seed = task_seed;
    task.index = index;
    Table& table = task.table;
    table.name = std::string(to_string(config.family)) + "-" + std::to_string(index);
    table.target_name = "y";
    for (int c = 0; c < present; ++c) table.class_names.push_back(std::to_string(c));
    table.target.reserve(n_rows);
    for (int label : y) table.target.push_back(remap[static_cast<std::size_t>(label)]);
    for (std::size_t j = 0; j < n_features; ++j) {
      Column column;
      column.name = "f" + std::to_string(j);
      column.kind = ColumnKind::numeric;
      column.values.resize(n_rows);
      column.missing.assign(n_rows, 0);
      for (std::size_t i = 0; i < n_rows; ++i) {
        column.values[i] = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
      table.columns.push_back(std::move(column));
    }
    return task;
  }
  throw internal_error("prior generator degenerate: no task with two adequately sized classes after " + std::to_string(kMaxAttempts) +
                       " attempts (index " + std::to_string(index) + ")");
}

}  // namespace tabcpt
