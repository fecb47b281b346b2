#include "run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tabcpt/error.hpp"
#include "tabcpt/random.hpp"
#include "tabcpt/table.hpp"

namespace tabcpt::cli {

namespace {

using nlohmann::json;

// Reads typed keys out of one JSON object and rejects any key nobody asked for.
class Section {
 public:
  Section(const json& object, std::string where) : object_(object), where_(std::move(where)) {
    if (!object_.is_object()) throw config_error(where_ + " must be a JSON object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!object_.contains(key)) return;
    const json& value = object_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!value.is_boolean()) throw config_error("");
        out = value.get<bool>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!value.is_string()) throw config_error("");
        out = value.get<std::string>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!value.is_number()) throw config_error("");
        out = value.get<double>();
      } else if constexpr (std::is_integral_v<T>) {
        if (std::is_unsigned_v<T> ? !value.is_number_unsigned() : !value.is_number_integer()) throw config_error("");
        out = value.get<T>();
      }
    } catch (const std::exception&) {
      throw config_error(where_ + "." + key + " has the wrong type");
    }
  }

  bool has(const char* key) const { return object_.contains(key); }

  const json* child(const char* key) {
    seen_.insert(key);
    return object_.contains(key) ? &object_.at(key) : nullptr;
  }

  void read_path(const char* key, std::filesystem::path& out, const std::filesystem::path& base) {
    std::string text;
    read(key, text);
    if (text.empty()) return;
    std::filesystem::path p(text);
    out = p.is_relative() ? (base / p).lexically_normal() : p;
  }

  void finish() const {
    for (const auto& [key, value] : object_.items()) {
      if (seen_.count(key) == 0) throw config_error("unknown key '" + where_ + "." + key + "'");
    }
  }

 private:
  const json& object_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_train(Section& s, TrainConfig& t, bool stage2) {
  std::size_t steps = t.schedule.total_steps;
  s.read("steps", steps);
  const bool explicit_warmup = s.has("warmup_steps");
  std::size_t warmup = 0;
  s.read("warmup_steps", warmup);
  t.schedule.total_steps = steps;
  t.schedule.warmup_steps = explicit_warmup ? warmup : steps / 20;  // default: 5% of the run
  s.read("peak_lr", t.schedule.peak_lr);
  s.read("final_lr", t.schedule.final_lr);
  s.read("max_rows", t.caps.max_rows);
  s.read("max_cells", t.caps.max_cells);
  s.read("context_fraction", t.context_fraction);
  s.read("beta1", t.adamw.beta1);
  s.read("beta2", t.adamw.beta2);
  s.read("eps", t.adamw.eps);
  s.read("weight_decay", t.adamw.weight_decay);
  s.read("log_every", t.log_every);
  if (stage2) {
    s.read("alpha", t.alpha);
    s.read("augment", t.augment);
  }
}

std::string number(double v) { return format_shortest(v); }

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.train_base.schedule = ScheduleConfig{1e-3, 150, 3000, 0.0};
  c.train_base.caps = CapConfig{512, 400000};
  c.train_base.alpha = 0.0;
  c.apply_seed();
  return c;
}

void RunConfig::apply_seed() {
  prior.seed = mix_seed(seed, 1);
  train_base.seed = mix_seed(seed, 2);
  model.init_seed = mix_seed(seed, 3);
  train.seed = mix_seed(seed, 4);
  eval.seed = mix_seed(seed, 5);
}

void RunConfig::apply_paper_fidelity() {
  const TrainConfig paper = paper_fidelity_train_config();
  train.schedule = paper.schedule;
  train.alpha = paper.alpha;
  train.caps = paper.caps;
  train.context_fraction = paper.context_fraction;
  train.augment = false;
  paper_fidelity = true;
}

void RunConfig::validate() const {
  model.validate();
  prior.validate();
  train_base.validate();
  train.validate();
  contamination.validate();
  if (eval.folds < 2) throw config_error("eval.folds must be at least 2");
  if (eval.context_caps.max_rows < 1 || eval.context_caps.max_cells < 1) {
    throw config_error("eval context caps must be at least 1");
  }
  if (prior.max_features > model.max_features) {
    throw config_error("prior.max_features exceeds model.max_features");
  }
}

std::vector<std::pair<std::string, std::string>> RunConfig::echo_train(const TrainConfig& t) const {
  return {
      {"paper_fidelity", paper_fidelity ? "true" : "false"},
      {"seed", std::to_string(seed)},
      {"steps", std::to_string(t.schedule.total_steps)},
      {"warmup_steps", std::to_string(t.schedule.warmup_steps)},
      {"peak_lr", number(t.schedule.peak_lr)},
      {"final_lr", number(t.schedule.final_lr)},
      {"alpha", number(t.alpha)},
      {"max_rows", std::to_string(t.caps.max_rows)},
      {"max_cells", std::to_string(t.caps.max_cells)},
      {"context_fraction", number(t.context_fraction)},
      {"beta1", number(t.adamw.beta1)},
      {"beta2", number(t.adamw.beta2)},
      {"eps", number(t.adamw.eps)},
      {"weight_decay", number(t.adamw.weight_decay)},
      {"augment", t.augment ? "true" : "false"},
  };
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw config_error(std::string("run config is not valid JSON: ") + e.what());
  }
  RunConfig c = default_run_config();
  Section top(root, "config");
  top.read("seed", c.seed);
  top.read_path("output_dir", c.output_dir, base_dir);
  top.read("label", c.label);

  if (const json* node = top.child("model")) {
    Section s(*node, "model");
    s.read("max_features", c.model.max_features);
    s.read("embed_dim", c.model.embed_dim);
    s.read("layers", c.model.layers);
    s.read("heads", c.model.heads);
    s.read("ff_dim", c.model.ff_dim);
    s.finish();
  }
  if (const json* node = top.child("prior")) {
    Section s(*node, "prior");
    std::string family = to_string(c.prior.family);
    s.read("family", family);
    c.prior.family = parse_prior_family(family);
    s.read("max_features", c.prior.max_features);
    s.read("max_classes", c.prior.max_classes);
    s.read("min_rows", c.prior.min_rows);
    s.read("max_rows", c.prior.max_rows);
    s.read("noise", c.prior.noise);
    s.read("min_class_fraction", c.prior.min_class_fraction);
    s.finish();
  }
  if (const json* node = top.child("train_base")) {
    Section s(*node, "train_base");
    read_train(s, c.train_base, false);
    s.finish();
  }
  if (const json* node = top.child("train")) {
    Section s(*node, "train");
    read_train(s, c.train, true);
    s.read_path("corpus_manifest", c.corpus_manifest, base_dir);
    s.finish();
  }
  if (const json* node = top.child("eval")) {
    Section s(*node, "eval");
    s.read_path("manifest", c.eval_manifest, base_dir);
    s.read_path("baselines", c.baselines, base_dir);
    s.read("folds", c.eval.folds);
    s.read("max_rows", c.eval.context_caps.max_rows);
    s.read("max_cells", c.eval.context_caps.max_cells);
    s.read("record_timing", c.eval.record_timing);
    s.finish();
  }
  if (const json* node = top.child("contamination")) {
    Section s(*node, "contamination");
    s.read("min_rows", c.contamination.min_rows);
    s.read("feature_jaccard_review", c.contamination.feature_jaccard_review);
    s.read("hash_review", c.contamination.hash_review);
    s.read("hash_exclude", c.contamination.hash_exclude);
    s.finish();
  }
  top.finish();
  c.apply_seed();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw input_error("cannot open run config " + file.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  RunConfig c = parse_run_config(buffer.str(), file.parent_path());
  if (c.label.empty()) c.label = file.stem().string();
  return c;
}

}  // namespace tabcpt::cli
