#include "tabcpt/train.hpp"

#include <cmath>
#include <numbers>

#include "tabcpt/digest.hpp"
#include "tabcpt/error.hpp"
#include "tabcpt/random.hpp"

namespace tabcpt {

void ScheduleConfig::validate() const {
  if (!(peak_lr >= 0.0) || !(final_lr >= 0.0)) throw config_error("learning rates must be non-negative");
  if (warmup_steps >= total_steps) throw config_error("warmup_steps must be smaller than total_steps");
}

double lr_at_step(const ScheduleConfig& schedule, std::size_t step) {
  if (step > schedule.total_steps) {
    throw input_error("step " + std::to_string(step) + " beyond schedule end " + std::to_string(schedule.total_steps));
  }
  if (step < schedule.warmup_steps) {
    return schedule.peak_lr * static_cast<double>(step) / static_cast<double>(schedule.warmup_steps);
  }
  const double progress = static_cast<double>(step - schedule.warmup_steps) /
                          static_cast<double>(schedule.total_steps - schedule.warmup_steps);
  return schedule.final_lr +
         (schedule.peak_lr - schedule.final_lr) * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

double l2sp_penalty(std::span<const double> w, const L2SPConfig& config) {
  if (w.size() != config.anchor.size()) throw input_error("L2-SP anchor length does not match the parameters");
  double ss = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = w[i] - config.anchor[i];
    ss += d * d;
  }
  return 0.5 * config.alpha * ss;
}

std::vector<double> l2sp_gradient(std::span<const double> w, const L2SPConfig& config) {
  if (w.size() != config.anchor.size()) throw input_error("L2-SP anchor length does not match the parameters");
  std::vector<double> grad(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) grad[i] = config.alpha * (w[i] - config.anchor[i]);
  return grad;
}

void adamw_step(std::vector<double>& params, std::span<const double> grads, OptimizerState& state, double lr) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw input_error("optimizer shapes do not match the parameters");
  }
  if (!(lr >= 0.0)) throw input_error("learning rate must be non-negative");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw numerical_error("non-finite gradient entry at index " + std::to_string(i) + " (optimizer step " +
                            std::to_string(state.t + 1) + ")");
    }
  }
  const AdamWConfig& h = state.hyper;
  state.t += 1;
  const double correction1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double correction2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    const double m_hat = state.m[i] / correction1;
    const double v_hat = state.v[i] / correction2;
    params[i] = params[i] - lr * m_hat / (std::sqrt(v_hat) + h.eps) - lr * h.weight_decay * params[i];
  }
}

TotalLoss total_loss(const ModelConfig& model, std::span<const double> params, const Batch& batch,
                     const L2SPConfig* l2sp) {
  LossGradient ce = gradient(model, params, batch);
  TotalLoss out;
  out.cross_entropy = ce.loss;
  out.grad = std::move(ce.grad);
  if (l2sp != nullptr) {
    out.penalty = l2sp_penalty(params, *l2sp);
    const auto penalty_grad = l2sp_gradient(params, *l2sp);
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += penalty_grad[i];
  }
  out.loss = out.cross_entropy + out.penalty;
  return out;
}

void TrainConfig::validate() const {
  if (schedule.total_steps > 0) schedule.validate();
  if (!(alpha >= 0.0)) throw config_error("alpha must be non-negative");
  if (caps.max_rows < 1 || caps.max_cells < 1) throw config_error("row and cell caps must be at least 1");
  if (!(context_fraction > 0.0 && context_fraction < 1.0)) throw config_error("context fraction must lie in (0, 1)");
  if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0) || !(adamw.beta2 >= 0.0 && adamw.beta2 < 1.0)) {
    throw config_error("AdamW betas must lie in [0, 1)");
  }
  if (!(adamw.eps > 0.0) || !(adamw.weight_decay >= 0.0)) throw config_error("AdamW eps must be positive, decay >= 0");
  if (log_every < 1) throw config_error("log_every must be at least 1");
}

TrainConfig paper_fidelity_train_config() {
  TrainConfig config;
  config.schedule.peak_lr = 3e-7;
  config.schedule.total_steps = 20000;
  config.schedule.warmup_steps = 1000;
  config.schedule.final_lr = 0.0;
  config.alpha = 0.003;
  config.caps = CapConfig{20000, 400000};
  config.context_fraction = 0.6;
  return config;
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw input_error("distance between vectors of different length");
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(ss);
}

std::vector<double> run_training(const ModelConfig& model, std::vector<double> params, const BatchSource& source,
                                 const TrainConfig& config, const L2SPConfig* l2sp, TrainLog* log) {
  config.validate();
  const std::vector<double> start = l2sp != nullptr ? l2sp->anchor : params;
  OptimizerState state(params.size(), config.adamw);
  const std::size_t steps = config.steps();
  for (std::size_t step = 0; step < steps; ++step) {
    const Batch batch = source(step);
    const double lr = lr_at_step(config.schedule, step);
    const TotalLoss loss = total_loss(model, params, batch, l2sp);
    if (!std::isfinite(loss.loss)) throw numerical_error("non-finite loss at step " + std::to_string(step + 1));
    adamw_step(params, loss.grad, state, lr);
    if (log != nullptr && ((step + 1) % config.log_every == 0 || step + 1 == steps)) {
      log->entries.push_back({step + 1, lr, loss.loss, loss.cross_entropy, loss.penalty, l2_distance(params, start)});
    }
  }
  return params;
}

Table augment_table(const Table& table, std::uint64_t seed) {
  Rng rng(seed);
  Table out = table;
  rng.shuffle(std::span<Column>(out.columns));
  if (!out.columns.empty()) out.columns.resize(rng.between(1, out.columns.size()));
  for (Column& column : out.columns) {
    if (column.kind != ColumnKind::numeric || rng.uniform() < 0.5) continue;
    for (double& v : column.values) v = -v;
  }

  const int classes = table.n_classes();
  if (classes >= 2) {
    const int kept = static_cast<int>(rng.between(2, static_cast<std::size_t>(classes)));
    std::vector<int> merge(static_cast<std::size_t>(classes));
    for (int c = 0; c < classes; ++c) merge[static_cast<std::size_t>(c)] = c < kept ? c : static_cast<int>(rng.below(kept));
    std::vector<int> relabel(static_cast<std::size_t>(kept));
    for (int c = 0; c < kept; ++c) relabel[static_cast<std::size_t>(c)] = c;
    rng.shuffle(std::span<int>(relabel));
    for (int& y : out.target) y = relabel[static_cast<std::size_t>(merge[static_cast<std::size_t>(y)])];
    out.target_raw.clear();
    out.class_names.resize(static_cast<std::size_t>(kept));
    for (int c = 0; c < kept; ++c) out.class_names[static_cast<std::size_t>(c)] = std::to_string(c);
  }
  return out;
}

Batch batch_from_table(const Table& table, const TrainConfig& config, std::size_t max_features,
                       std::uint64_t step_seed) {
  const auto rows = capped_rows(table.n_rows(), table.n_cols(), config.caps, mix_seed(step_seed, 1));
  const SplitIndices split = context_query_split(rows.size(), config.context_fraction, mix_seed(step_seed, 2));
  std::vector<std::size_t> context_rows;
  std::vector<std::size_t> query_rows;
  std::vector<int> context_y;
  std::vector<int> query_y;
  for (std::size_t i : split.context) {
    context_rows.push_back(rows[i]);
    context_y.push_back(table.target[rows[i]]);
  }
  for (std::size_t i : split.query) {
    query_rows.push_back(rows[i]);
    query_y.push_back(table.target[rows[i]]);
  }
  FeatureBlock context = extract_features(table, context_rows);
  FeatureBlock query = extract_features(table, query_rows);
  znormalize(context, query);
  return make_batch(context, context_y, query, query_y, max_features);
}

Checkpoint pretrain_base(const PriorConfig& prior, const ModelConfig& model, const TrainConfig& config,
                         TrainLog* log) {
  prior.validate();
  model.validate();
  config.validate();
  if (prior.max_features > model.max_features) {
    throw config_error("prior max_features exceeds the model's max_features");
  }
  const BatchSource source = [&](std::size_t step) {
    const SyntheticTask task = sample_task(prior, step);
    return batch_from_table(task.table, config, model.max_features, mix_seed(config.seed, step));
  };
  Checkpoint checkpoint;
  checkpoint.model = model;
  checkpoint.params = run_training(model, init_params(model, model.init_seed), source, config, nullptr, log);
  checkpoint.stage = Stage::base;
  checkpoint.steps = config.steps();
  checkpoint.seed = config.seed;
  return checkpoint;
}

std::vector<Table> prepare_corpus(std::span<const Table> tables, std::size_t max_features, const CapConfig& caps,
                                  std::vector<std::string>* warnings) {
  std::vector<Table> prepared;
  auto reject = [&](const Table& table, const std::string& why) {
    if (warnings != nullptr) warnings->push_back("skipping dataset '" + table.name + "': " + why);
  };
  for (const Table& raw : tables) {
    Table table;
    try {
      table = preprocess(raw);
    } catch (const Error& e) {
      reject(raw, e.what());
      continue;
    }
    if (table.n_cols() == 0) {
      reject(table, "no feature columns");
      continue;
    }
    if (table.n_cols() > max_features) {
      reject(table, std::to_string(table.n_cols()) + " features exceed the model's " + std::to_string(max_features));
      continue;
    }
    if (row_budget(table.n_rows(), table.n_cols(), caps) < 2) {
      reject(table, "fewer than two rows after caps");
      continue;
    }
    std::vector<bool> seen(static_cast<std::size_t>(table.n_classes()), false);
    std::size_t present = 0;
    for (int y : table.target) {
      if (!seen[static_cast<std::size_t>(y)]) {
        seen[static_cast<std::size_t>(y)] = true;
        ++present;
      }
    }
    if (present < 2) {
      reject(table, "fewer than two classes");
      continue;
    }
    prepared.push_back(std::move(table));
  }
  return prepared;
}

Checkpoint continue_pretrain(const Checkpoint& base, std::span<const Table> corpus, const TrainConfig& config,
                             TrainLog* log) {
  config.validate();
  std::vector<std::string> warnings;
  const std::vector<Table> prepared = prepare_corpus(corpus, base.model.max_features, config.caps, &warnings);
  if (log != nullptr) log->warnings.insert(log->warnings.end(), warnings.begin(), warnings.end());
  if (prepared.empty()) throw input_error("continued pre-training corpus is empty");

  const L2SPConfig l2sp{config.alpha, base.params};
  const BatchSource source = [&](std::size_t step) {
    const std::uint64_t step_seed = mix_seed(config.seed, step);
    Rng rng(step_seed);
    const Table& table = prepared[rng.below(prepared.size())];
    if (config.augment) {
      return batch_from_table(augment_table(table, mix_seed(step_seed, 11)), config, base.model.max_features,
                              mix_seed(step_seed, 7));
    }
    return batch_from_table(table, config, base.model.max_features, mix_seed(step_seed, 7));
  };
  Checkpoint checkpoint;
  checkpoint.model = base.model;
  checkpoint.params = run_training(base.model, base.params, source, config, &l2sp, log);
  checkpoint.stage = Stage::continued;
  checkpoint.steps = config.steps();
  checkpoint.anchor_digest = digest_doubles(base.params);
  checkpoint.seed = config.seed;
  return checkpoint;
}

}  // namespace tabcpt
