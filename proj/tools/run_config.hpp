#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tabcpt/contamination.hpp"
#include "tabcpt/eval.hpp"
#include "tabcpt/model.hpp"
#include "tabcpt/prior.hpp"
#include "tabcpt/train.hpp"

namespace tabcpt::cli {

// Everything one invocation needs. Loaded from a single JSON object; every
// section and key is optional, unknown keys are rejected. All seeds derive
// from `seed`.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = ".";
  std::string label;  // names an ablation arm; defaults to the config file stem

  ModelConfig model;
  PriorConfig prior;
  TrainConfig train_base;
  TrainConfig train;
  std::filesystem::path corpus_manifest;

  EvalConfig eval;
  std::filesystem::path eval_manifest;
  std::filesystem::path baselines;

  ContaminationThresholds contamination;
  bool paper_fidelity = false;

  /// Re-derives the per-component seeds from `seed`.
  void apply_seed();
  /// Snaps the stage-2 training values to the paper-fidelity constants.
  void apply_paper_fidelity();
  void validate() const;

  /// Key/value lines echoed at the top of logs and reports.
  std::vector<std::pair<std::string, std::string>> echo_train(const TrainConfig& config) const;
};

RunConfig default_run_config();

/// Parses a JSON run config. Relative paths resolve against `base_dir`.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir);

RunConfig load_run_config(const std::filesystem::path& file);

}  // namespace tabcpt::cli
