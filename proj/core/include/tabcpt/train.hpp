#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tabcpt/checkpoint.hpp"
#include "tabcpt/model.hpp"
#include "tabcpt/prior.hpp"
#include "tabcpt/table.hpp"

namespace tabcpt {

// Linear warm-up to peak_lr, then cosine annealing down to final_lr at total_steps.
struct ScheduleConfig {
  double peak_lr = 3e-7;
  std::size_t warmup_steps = 1000;
  std::size_t total_steps = 20000;
  double final_lr = 0.0;

  void validate() const;
  bool operator==(const ScheduleConfig&) const = default;
};

double lr_at_step(const ScheduleConfig& schedule, std::size_t step);

// L2-SP: (alpha / 2) * ||w - w0||^2 with w0 the stage-1 parameters.
struct L2SPConfig {
  double alpha = 0.003;
  std::vector<double> anchor;
};

double l2sp_penalty(std::span<const double> w, const L2SPConfig& config);
std::vector<double> l2sp_gradient(std::span<const double> w, const L2SPConfig& config);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  bool operator==(const AdamWConfig&) const = default;
};

struct OptimizerState {
  AdamWConfig hyper;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  OptimizerState() = default;
  OptimizerState(std::size_t n, AdamWConfig config) : hyper(config), m(n, 0.0), v(n, 0.0) {}
};

/// One decoupled-weight-decay Adam update. Throws a numerical error, leaving
/// params and state untouched, if any gradient entry is non-finite.
void adamw_step(std::vector<double>& params, std::span<const double> grads, OptimizerState& state, double lr);

struct TotalLoss {
  double loss = 0.0;
  double cross_entropy = 0.0;
  double penalty = 0.0;
  std::vector<double> grad;
};

/// Cross-entropy plus the optional L2-SP term, with the combined gradient.
TotalLoss total_loss(const ModelConfig& model, std::span<const double> params, const Batch& batch,
                     const L2SPConfig* l2sp);

struct TrainConfig {
  ScheduleConfig schedule;  // schedule.total_steps is the number of optimizer steps
  double alpha = 0.003;
  CapConfig caps;
  double context_fraction = 0.6;
  AdamWConfig adamw;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
  // Stage 2 only: redraw a structure-preserving variant of each sampled table
  // per step (see augment_table). Off for paper-fidelity runs.
  bool augment = false;

  std::size_t steps() const { return schedule.total_steps; }
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// The stage-2 values used for paper-fidelity runs.
TrainConfig paper_fidelity_train_config();

struct TrainLogEntry {
  std::size_t step = 0;  // optimizer steps completed, 1-based
  double lr = 0.0;
  double loss = 0.0;
  double cross_entropy = 0.0;
  double penalty = 0.0;
  double distance_to_anchor = 0.0;  // ||w - w0||_2
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;
  std::vector<std::string> warnings;
};

// Supplies the batch for a given step (0-based).
using BatchSource = std::function<Batch(std::size_t step)>;

/// The shared update loop of both stages: total_loss, then adamw_step at
/// lr_at_step. `l2sp` may be null (stage 1).
std::vector<double> run_training(const ModelConfig& model, std::vector<double> params, const BatchSource& source,
                                 const TrainConfig& config, const L2SPConfig* l2sp, TrainLog* log);

/// A random variant of a preprocessed table with the same kind of decision
/// structure: shuffled and subset feature columns, random sign flips of
/// numeric columns, and a random merge and relabelling of the classes (at
/// least two remain). Used so a small stage-2 corpus is not memorized.
Table augment_table(const Table& table, std::uint64_t seed);

/// One training batch from one table: caps, context/query split, normalization.
Batch batch_from_table(const Table& table, const TrainConfig& config, std::size_t max_features,
                       std::uint64_t step_seed);

/// Stage 1: trains a fresh initialization on the synthetic task stream. No anchor exists, so alpha is 0.
Checkpoint pretrain_base(const PriorConfig& prior, const ModelConfig& model, const TrainConfig& config,
                         TrainLog* log = nullptr);

/// Tables usable for stage 2: preprocessed, at most max_features wide, at
/// least two rows left after the caps, and at least two classes. Rejected
/// tables are named in `warnings`.
std::vector<Table> prepare_corpus(std::span<const Table> tables, std::size_t max_features, const CapConfig& caps,
                                  std::vector<std::string>* warnings);

/// Stage 2: continues from `base` on real tables with L2-SP anchored at the base parameters.
/// Each step draws one table uniformly, applies the caps, splits 60/40 and normalizes.
Checkpoint continue_pretrain(const Checkpoint& base, std::span<const Table> corpus, const TrainConfig& config,
                             TrainLog* log = nullptr);

double l2_distance(std::span<const double> a, std::span<const double> b);

}  // namespace tabcpt
