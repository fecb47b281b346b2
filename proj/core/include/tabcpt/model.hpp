#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tabcpt/table.hpp"

namespace tabcpt {

// Small in-context classifier. One token per table row; context tokens carry
// a label embedding, query tokens do not. Context tokens attend to every
// context token, query tokens attend to the context and to themselves only.
// There is no row position signal, so query outputs are invariant to context
// order and independent of the other queries.

inline constexpr std::size_t kMaxClasses = 10;

struct ModelConfig {
  std::size_t max_features = 8;
  std::size_t n_classes_out = kMaxClasses;
  std::size_t embed_dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_dim = 64;
  std::uint64_t init_seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
};

// Named slices of the flat parameter vector, in storage order.
class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& config);

  const std::vector<ParamSlice>& slices() const { return slices_; }
  const ParamSlice& at(const std::string& name) const;
  std::size_t total_size() const { return total_; }

 private:
  void add(std::string name, std::size_t rows, std::size_t cols);

  std::vector<ParamSlice> slices_;
  std::map<std::string, std::size_t> index_;
  std::size_t total_ = 0;
};

using NamedParams = std::map<std::string, Matrix>;

NamedParams unflatten(const ParamLayout& layout, std::span<const double> flat);
std::vector<double> flatten(const ParamLayout& layout, const NamedParams& named);

/// Scaled-normal weights (std 1/sqrt(fan_in)), zero biases, unit layer-norm gains.
std::vector<double> init_params(const ModelConfig& config, std::uint64_t seed);

// One dataset's worth of rows. Feature blocks are padded to max_features;
// `feature_present` marks the dataset's real columns.
struct Batch {
  Matrix context_x;
  Matrix context_missing;
  std::vector<int> context_y;
  Matrix query_x;
  Matrix query_missing;
  std::vector<int> query_y;  // empty when unlabeled
  std::vector<std::uint8_t> feature_present;

  std::size_t n_context() const { return context_y.size(); }
  std::size_t n_query() const { return static_cast<std::size_t>(query_x.rows()); }
  std::size_t width() const { return feature_present.size(); }

  void validate(std::size_t max_features) const;
};

/// Pads normalized feature blocks out to `max_features` columns.
Batch make_batch(const FeatureBlock& context, std::span<const int> context_y, const FeatureBlock& query,
                 std::span<const int> query_y, std::size_t max_features);

/// Query logits, n_query x n_classes_out.
Matrix forward(const ModelConfig& config, std::span<const double> params, const Batch& batch);

Matrix softmax_rows(const Matrix& logits);

/// Row-wise softmax of the logits.
Matrix predict_proba(const ModelConfig& config, std::span<const double> params, const Batch& batch);

/// Mean negative log-softmax of the true class over query rows.
double loss_ce(const Matrix& logits, std::span<const int> labels);

struct LossGradient {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Cross-entropy of the query labels and its exact gradient (reverse mode).
LossGradient gradient(const ModelConfig& config, std::span<const double> params, const Batch& batch);

/// Back-propagates an arbitrary upstream gradient on the logits.
std::vector<double> backward_from_logits(const ModelConfig& config, std::span<const double> params,
                                         const Batch& batch, const Matrix& dlogits);

}  // namespace tabcpt
