#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "run_config.hpp"
#include "tabcpt/checkpoint.hpp"
#include "tabcpt/contamination.hpp"
#include "tabcpt/digest.hpp"
#include "tabcpt/error.hpp"
#include "tabcpt/eval.hpp"
#include "tabcpt/manifest.hpp"
#include "tabcpt/random.hpp"
#include "tabcpt/train.hpp"

namespace tabcpt::cli {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

constexpr std::uint64_t kProbeTag = 0x70726f6265;  // "probe"

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool paper_fidelity = false;
  std::string output_dir;
  bool override_curation = false;
};

void apply_globals(RunConfig& config, const Globals& g) {
  if (g.seed) {
    config.seed = *g.seed;
    config.apply_seed();
  }
  if (!g.output_dir.empty()) config.output_dir = g.output_dir;
  if (g.paper_fidelity) config.apply_paper_fidelity();
}

RunConfig resolve_config(const Globals& g) {
  RunConfig config = g.config.empty() ? default_run_config() : load_run_config(g.config);
  apply_globals(config, g);
  config.validate();
  return config;
}

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("cannot write " + file.string());
  out << text;
  if (!out) throw input_error("failed writing " + file.string());
}

fs::path require_path(const std::string& flag_value, const fs::path& from_config, const char* what) {
  if (!flag_value.empty()) return flag_value;
  if (!from_config.empty()) return from_config;
  throw config_error(std::string("no ") + what + " given (flag or run config)");
}

// JSON Lines run log: config echo, warnings, one line per log interval.
class RunLog {
 public:
  void config(const std::vector<std::pair<std::string, std::string>>& echo) {
    for (const auto& [key, value] : echo) add({{"type", "config"}, {"key", key}, {"value", value}});
  }
  void warning(const std::string& message) { add({{"type", "warning"}, {"message", message}}); }
  void steps(const TrainLog& log) {
    for (const std::string& w : log.warnings) warning(w);
    for (const TrainLogEntry& e : log.entries) {
      add({{"type", "step"},
           {"step", e.step},
           {"lr", e.lr},
           {"loss", e.loss},
           {"cross_entropy", e.cross_entropy},
           {"penalty", e.penalty},
           {"distance_to_anchor", e.distance_to_anchor}});
    }
  }
  void add(const ojson& line) { text_ += line.dump() + "\n"; }
  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

std::vector<Table> load_tables(const std::vector<DatasetManifest>& datasets) {
  std::vector<Table> tables;
  for (CorpusEntry& entry : load_corpus(datasets)) {
    if (!entry.table) throw input_error(entry.load_error);
    tables.push_back(std::move(*entry.table));
  }
  return tables;
}

std::vector<EvalDataset> load_suite(const fs::path& manifest_file) {
  const Manifest manifest = read_manifest(manifest_file);
  if (manifest.datasets.empty()) throw input_error("evaluation manifest " + manifest_file.string() + " lists no datasets");
  std::vector<EvalDataset> suite;
  auto tables = load_tables(manifest.datasets);
  for (std::size_t i = 0; i < tables.size(); ++i) suite.push_back({manifest.datasets[i].id, std::move(tables[i])});
  return suite;
}

// Stage-2 corpora must come out of `curate` unless the user overrides it.
Manifest curated_corpus(const fs::path& file, bool override_curation, RunLog& log, std::ostream& err) {
  Manifest manifest = read_manifest(file);
  if (!curation_valid(manifest)) {
    const std::string what = "corpus manifest " + file.string() + " carries no valid curation stamp";
    if (!override_curation) {
      throw Error(ErrorKind::curation_guard, what + "; run `tabcpt curate` first or pass --override-curation");
    }
    err << "WARNING: " << what << ". --override-curation given: training on an unscanned corpus.\n";
    log.warning("CURATION OVERRIDE: " + what);
  }
  return manifest;
}

std::vector<std::pair<std::string, std::string>> eval_echo(const RunConfig& config, const fs::path& manifest) {
  return {{"eval_manifest", manifest.generic_string()},
          {"folds", std::to_string(config.eval.folds)},
          {"eval_seed", std::to_string(config.eval.seed)},
          {"context_max_rows", std::to_string(config.eval.context_caps.max_rows)},
          {"context_max_cells", std::to_string(config.eval.context_caps.max_cells)}};
}

int cmd_curate(const RunConfig& config, const std::string& corpus_flag, const std::string& eval_flag,
               std::ostream& out) {
  const fs::path corpus_file = require_path(corpus_flag, config.corpus_manifest, "corpus manifest");
  const fs::path eval_file = require_path(eval_flag, config.eval_manifest, "evaluation manifest");
  const Manifest corpus = read_manifest(corpus_file);
  const Manifest eval = read_manifest(eval_file);

  const auto train_entries = load_corpus(corpus.datasets);
  const auto eval_entries = load_corpus(eval.datasets);
  const ContaminationReport report = scan_corpus(train_entries, eval_entries, config.contamination);

  const fs::path dir = config.output_dir;
  write_text(dir / "contamination_report.jsonl", report.to_jsonl());
  write_text(dir / "contamination_summary.txt", report.summary_text());
  out << report.summary_text();

  for (const LoadFailure& failure : report.load_failures) {
    if (failure.side == "eval") throw input_error("evaluation dataset failed to load: " + failure.message);
  }

  const std::set<std::string> passed(report.passed_ids.begin(), report.passed_ids.end());
  Manifest curated;
  for (DatasetManifest record : corpus.datasets) {
    if (passed.count(record.id) == 0) continue;
    record.path = fs::absolute(record.path).lexically_normal();
    curated.datasets.push_back(std::move(record));
  }
  curated.curation = CurationStamp{records_digest(curated.datasets), records_digest(eval.datasets)};
  write_manifest(dir / "curated_manifest.jsonl", curated);
  out << "curated manifest: " << (dir / "curated_manifest.jsonl").string() << " (" << curated.datasets.size()
      << " of " << corpus.datasets.size() << " datasets)\n";

  const bool dropped = !report.excluded_ids.empty() ||
                       std::any_of(report.load_failures.begin(), report.load_failures.end(),
                                   [](const LoadFailure& f) { return f.side == "train"; });
  return dropped ? kExitCurationExclusions : kExitOk;
}

int cmd_train_base(const RunConfig& config, std::ostream& out) {
  RunLog log;
  auto echo = config.echo_train(config.train_base);
  echo.emplace_back("prior_family", to_string(config.prior.family));
  log.config(echo);

  PriorConfig probe_prior = config.prior;
  probe_prior.seed = mix_seed(config.prior.seed, kProbeTag);
  const Table probe_table = sample_task(probe_prior, 0).table;
  const Batch probe = batch_from_table(probe_table, config.train_base, config.model.max_features,
                                       mix_seed(config.seed, kProbeTag));
  const double probe_before =
      loss_ce(forward(config.model, init_params(config.model, config.model.init_seed), probe), probe.query_y);

  TrainLog train_log;
  const Checkpoint checkpoint = pretrain_base(config.prior, config.model, config.train_base, &train_log);
  log.steps(train_log);
  const double probe_after = loss_ce(forward(config.model, checkpoint.params, probe), probe.query_y);
  log.add({{"type", "probe"}, {"loss_before", probe_before}, {"loss_after", probe_after}});

  const fs::path file = config.output_dir / "base.ckpt";
  save_checkpoint(checkpoint, file);
  const std::string digest = to_hex(digest_doubles(checkpoint.params));
  log.add({{"type", "checkpoint"}, {"path", "base.ckpt"}, {"params_digest", digest}});
  write_text(config.output_dir / "train_base.log", log.text());
  out << "base checkpoint: " << file.string() << " (params digest " << digest << ", probe loss " << probe_before
      << " -> " << probe_after << ")\n";
  return kExitOk;
}

int cmd_continue(const RunConfig& config, const Globals& globals, const std::string& base_flag,
                 const std::string& corpus_flag, std::ostream& out, std::ostream& err) {
  const fs::path base_file = base_flag.empty() ? config.output_dir / "base.ckpt" : fs::path(base_flag);
  const fs::path corpus_file = require_path(corpus_flag, config.corpus_manifest, "corpus manifest");

  RunLog log;
  auto echo = config.echo_train(config.train);
  echo.emplace_back("base_checkpoint", base_file.generic_string());
  echo.emplace_back("corpus_manifest", corpus_file.generic_string());
  log.config(echo);

  const Manifest corpus = curated_corpus(corpus_file, globals.override_curation, log, err);
  const Checkpoint base = load_checkpoint(base_file);
  if (base.stage != Stage::base) log.warning("starting checkpoint is itself a continued checkpoint");
  const std::vector<Table> tables = load_tables(corpus.datasets);

  TrainLog train_log;
  const Checkpoint checkpoint = continue_pretrain(base, tables, config.train, &train_log);
  log.steps(train_log);
  for (const std::string& w : train_log.warnings) err << "warning: " << w << '\n';

  const fs::path file = config.output_dir / "continued.ckpt";
  save_checkpoint(checkpoint, file);
  const std::string digest = to_hex(digest_doubles(checkpoint.params));
  log.add({{"type", "checkpoint"},
           {"path", "continued.ckpt"},
           {"params_digest", digest},
           {"anchor_digest", to_hex(checkpoint.anchor_digest)},
           {"final_distance_to_anchor", l2_distance(checkpoint.params, base.params)}});
  write_text(config.output_dir / "continue_pretrain.log", log.text());
  out << "continued checkpoint: " << file.string() << " (params digest " << digest << ")\n";
  return kExitOk;
}

int cmd_evaluate(const RunConfig& config, const std::vector<std::string>& checkpoint_args,
                 const std::string& eval_flag, const std::string& baselines_flag, std::ostream& out) {
  const fs::path eval_file = require_path(eval_flag, config.eval_manifest, "evaluation manifest");
  const fs::path baselines_file = baselines_flag.empty() ? config.baselines : fs::path(baselines_flag);

  std::vector<std::pair<std::string, fs::path>> checkpoints;
  for (const std::string& arg : checkpoint_args) {
    const auto eq = arg.find('=');
    if (eq == std::string::npos) {
      checkpoints.emplace_back(fs::path(arg).stem().string(), arg);
    } else {
      checkpoints.emplace_back(arg.substr(0, eq), arg.substr(eq + 1));
    }
  }
  if (checkpoints.empty()) throw config_error("evaluate needs at least one --checkpoint");

  const std::vector<EvalDataset> suite = load_suite(eval_file);
  auto echo = eval_echo(config, eval_file);
  std::vector<ModelEvaluation> runs;
  for (const auto& [label, path] : checkpoints) {
    const Checkpoint checkpoint = load_checkpoint(path);
    echo.emplace_back("checkpoint." + label, to_hex(digest_doubles(checkpoint.params)));
    runs.push_back(evaluate_model(label, checkpoint, suite, config.eval));
  }
  BaselineScores baselines;
  if (!baselines_file.empty()) {
    baselines = read_baselines(baselines_file);
    echo.emplace_back("baselines", baselines_file.generic_string());
  }
  const EvalReport report = aggregate_report(runs, baselines, echo);
  write_text(config.output_dir / "eval_report.jsonl", report.to_jsonl());
  write_text(config.output_dir / "eval_report.txt", report.to_table());
  out << report.to_table();
  return kExitOk;
}

int cmd_ablation(const RunConfig& config, const Globals& globals, const std::string& kind_text,
                 const std::string& base_flag, const std::vector<std::string>& arm_files,
                 const std::string& eval_flag, std::ostream& out, std::ostream& err) {
  const AblationKind kind = parse_ablation_kind(kind_text);
  const fs::path base_file = base_flag.empty() ? config.output_dir / "base.ckpt" : fs::path(base_flag);
  const fs::path eval_file = require_path(eval_flag, config.eval_manifest, "evaluation manifest");

  RunLog guard_log;
  std::vector<AblationArm> arms;
  for (const std::string& file : arm_files) {
    RunConfig arm_config = load_run_config(file);
    apply_globals(arm_config, globals);
    arm_config.validate();
    if (arm_config.corpus_manifest.empty()) throw config_error("arm config " + file + " names no train.corpus_manifest");
    const Manifest corpus = curated_corpus(arm_config.corpus_manifest, globals.override_curation, guard_log, err);
    AblationArm arm;
    arm.label = arm_config.label;
    arm.config = arm_config.train;
    arm.corpus_id = to_hex(records_digest(corpus.datasets));
    arm.corpus = load_tables(corpus.datasets);
    arms.push_back(std::move(arm));
  }
  validate_ablation(kind, arms);

  const Checkpoint base = load_checkpoint(base_file);
  const std::vector<EvalDataset> suite = load_suite(eval_file);
  const AblationReport report = run_ablation(kind, base, arms, suite, config.eval);
  write_text(config.output_dir / "ablation_report.jsonl", guard_log.text() + report.to_jsonl());
  write_text(config.output_dir / "ablation_report.txt", report.to_table());
  out << report.to_table();
  return kExitOk;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::input: return kExitInput;
    case ErrorKind::internal: return kExitInternal;
    case ErrorKind::numerical: return kExitNumerical;
    case ErrorKind::curation_guard: return kExitCurationGuard;
    case ErrorKind::config: return kExitConfig;
  }
  return kExitInternal;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"tabcpt: continued pre-training of a tabular in-context classifier"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "Run config (JSON)");
  app.add_option("--seed", g.seed, "Master seed; overrides the config");
  app.add_flag("--paper-fidelity", g.paper_fidelity,
               "Pin stage 2 to the reference recipe: lr 3e-7, 20k steps, 1k warmup, alpha 0.003, no augmentation");
  app.add_option("--output-dir", g.output_dir, "Directory for every output file");
  app.add_flag("--override-curation", g.override_curation, "Allow stage-2 training on an uncurated manifest");

  std::string corpus;
  std::string eval;
  std::string base;
  std::string baselines;
  std::string kind;
  std::vector<std::string> checkpoints;
  std::vector<std::string> arms;

  CLI::App* curate = app.add_subcommand("curate", "Scan a training corpus against the evaluation suite");
  curate->add_option("--corpus", corpus, "Training corpus manifest");
  curate->add_option("--eval", eval, "Evaluation suite manifest");

  CLI::App* train_base = app.add_subcommand("train-base", "Stage 1: pre-train on the synthetic prior");

  CLI::App* cont = app.add_subcommand("continue-pretrain", "Stage 2: continue on a curated corpus with L2-SP");
  cont->add_option("--base", base, "Base checkpoint (default: <output-dir>/base.ckpt)");
  cont->add_option("--corpus", corpus, "Curated corpus manifest");

  CLI::App* evaluate = app.add_subcommand("evaluate", "Cross-validated evaluation and report");
  evaluate->add_option("--checkpoint", checkpoints, "Checkpoint, optionally as label=path (repeatable)");
  evaluate->add_option("--eval", eval, "Evaluation suite manifest");
  evaluate->add_option("--baselines", baselines, "Baseline scores (JSON Lines)");

  CLI::App* ablation = app.add_subcommand("ablation", "Context-size or data-source ablation");
  ablation->add_option("--kind", kind, "context-size or data-source")->required();
  ablation->add_option("--base", base, "Base checkpoint (default: <output-dir>/base.ckpt)");
  ablation->add_option("--arm", arms, "Run config of one stage-2 arm (repeatable)")->required();
  ablation->add_option("--eval", eval, "Evaluation suite manifest");

  std::vector<std::string> argv_storage{"tabcpt"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const std::string& a : argv_storage) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const RunConfig config = resolve_config(g);
    if (g.override_curation) err << "WARNING: --override-curation is set\n";
    fs::create_directories(config.output_dir);
    if (*curate) return cmd_curate(config, corpus, eval, out);
    if (*train_base) return cmd_train_base(config, out);
    if (*cont) return cmd_continue(config, g, base, corpus, out, err);
    if (*evaluate) return cmd_evaluate(config, checkpoints, eval, baselines, out);
    if (*ablation) return cmd_ablation(config, g, kind, base, arms, eval, out, err);
    return kExitInternal;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace tabcpt::cli
