#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>

#include "tabcpt/table.hpp"

namespace tabcpt {

// Toy synthetic prior for stage-1 training. Features are standard normal;
// labels come from one of three random function families.
enum class PriorFamily { random_linear, random_mlp, random_tree };

const char* to_string(PriorFamily family);
PriorFamily parse_prior_family(const std::string& text);

struct PriorConfig {
  PriorFamily family = PriorFamily::random_linear;
  std::size_t max_features = 8;  // per-task width drawn from [1, max_features]
  int max_classes = 2;           // per-task class count drawn from [2, max_classes]
  std::size_t min_rows = 64;
  std::size_t max_rows = 256;
  double noise = 0.0;            // scale of the label noise added before the argmax
  // Every class that occurs must cover at least this share of the rows. A
  // sliver class of two or three rows leaves most CV folds without a positive
  // and turns the task's ROC-AUC into noise.
  double min_class_fraction = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticTask {
  Table table;
  PriorFamily family = PriorFamily::random_linear;
  std::uint64_t seed = 0;  // seed the task was generated from
  std::size_t index = 0;
};

/// Deterministic in (config, index). Redraws until at least two classes are
/// present and none is smaller than min_class_fraction of the rows; gives up
/// with an internal error after 100 attempts.
SyntheticTask sample_task(const PriorConfig& config, std::size_t index);

// Endless, restartable sequence sample_task(config, start), sample_task(config, start + 1), ...
class TaskStream {
 public:
  explicit TaskStream(PriorConfig config, std::size_t start = 0) : config_(std::move(config)), next_(start) {}

  SyntheticTask next() { return sample_task(config_, next_++); }
  std::size_t position() const { return next_; }
  const PriorConfig& config() const { return config_; }

 private:
  PriorConfig config_;
  std::size_t next_;
};

}  // namespace tabcpt
