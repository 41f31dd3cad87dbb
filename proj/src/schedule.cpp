#include "uimer/schedule.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "uimer/errors.hpp"
#include "uimer/metrics.hpp"
#include "uimer/random.hpp"

namespace uimer {
namespace {

// Stream identifiers for derive_seed.
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kReplaceStream = 2;
constexpr std::uint64_t kGateStream = 3;

std::vector<std::vector<AnnotatedExample>> make_batches(const Corpus& corpus, int batch_size, std::uint64_t seed) {
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span(order));
  std::vector<std::vector<AnnotatedExample>> out;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    auto& b = out.emplace_back();
    for (auto k = start; k < end; ++k) b.push_back(corpus.examples[order[k]]);
  }
  return out;
}

long steps_per_epoch(const Corpus& corpus, int batch_size) {
  return static_cast<long>((corpus.size() + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size));
}

// Mean task loss built the same way the combined objective builds it, so a
// zero alpha reproduces task-only training bit for bit.
ag::Var mean_task_loss(const TaskModel& model, std::span<const AnnotatedExample> batch) {
  ag::Var task = ag::scalar(0.0);
  for (const auto& ex : batch) task = ag::add(task, task_loss_var(model, ex));
  return ag::scale(task, 1.0 / static_cast<double>(batch.size()));
}

struct BestTracker {
  double best = -std::numeric_limits<double>::infinity();
  int epoch = -1;
  std::vector<ag::Matrix> params;

  bool offer(const TaskModel& model, double dev, int at) {
    if (!(dev > best)) return false;
    best = dev;
    epoch = at;
    params.clear();
    for (const auto& p : model.parameters()) params.push_back(p.value());
    return true;
  }

  void restore(TaskModel& model) const {
    if (params.empty()) return;
    auto current = model.parameters();
    for (std::size_t i = 0; i < current.size(); ++i) current[i].mutable_value() = params[i];
  }
};

struct LrPlan {
  long warm = 1;
  long total = 1;
};

LrPlan lr_plan(const ScheduleConfig& s, long total_steps) {
  LrPlan p;
  p.total = std::max(1L, total_steps);
  p.warm = std::max(1L, static_cast<long>(std::lround(s.lr_warmup_fraction * static_cast<double>(p.total))));
  p.warm = std::min(p.warm, p.total);
  return p;
}

// One task-only epoch; returns the mean batch loss.
double task_epoch(TaskModel& model, AdamW& opt, const Corpus& train, const ScheduleConfig& s, std::uint64_t seed,
                  int epoch, long& step, const LrPlan& plan) {
  double sum = 0.0;
  const auto batches = make_batches(train, s.batch_size, derive_seed(seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
  for (const auto& b : batches) {
    opt.zero_grad();
    const auto loss = mean_task_loss(model, b);
    ag::backward(loss);
    opt.step(linear_warmup_factor(step++, plan.warm, plan.total));
    sum += loss.item();
  }
  return sum / static_cast<double>(batches.size());
}

struct JointEpoch {
  double l_task = 0.0;
  std::optional<double> l_int;
  int skipped = 0;
};

JointEpoch joint_epoch(TaskModel& model, AdamW& opt, const Corpus& train, const ObjectiveConfig& objective,
                       const Interpreter& interpreter, const ScheduleConfig& s, std::uint64_t seed, int epoch,
                       long& step, const LrPlan& plan) {
  JointEpoch out;
  double l_int_sum = 0.0;
  int l_int_batches = 0;
  const auto batches = make_batches(train, s.batch_size, derive_seed(seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
  for (const auto& b : batches) {
    opt.zero_grad();
    const auto co = combined_objective(model, b, objective, interpreter,
                                       derive_seed(seed, kReplaceStream, static_cast<std::uint64_t>(step)));
    ag::backward(co.total);
    opt.step(linear_warmup_factor(step++, plan.warm, plan.total));
    out.l_task += co.task;
    out.skipped += co.skipped;
    if (co.contributing > 0) {
      l_int_sum += co.l_int;
      ++l_int_batches;
    }
  }
  out.l_task /= static_cast<double>(batches.size());
  if (l_int_batches > 0) out.l_int = l_int_sum / l_int_batches;
  return out;
}

double extractor_epoch(Extractor& extractor, AdamW& opt, const TaskModel& model, const Corpus& train,
                       const ScheduleConfig& s, std::uint64_t seed, int epoch) {
  double sum = 0.0;
  const auto batches = make_batches(train, s.batch_size, derive_seed(seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
  Rng gate_rng(derive_seed(seed, kGateStream, static_cast<std::uint64_t>(epoch)));
  for (const auto& b : batches) {
    opt.zero_grad();
    const auto loss = extractor_objective_var(extractor, model, b, &gate_rng);
    ag::backward(loss);
    opt.step();
    sum += loss.item();
  }
  return sum / static_cast<double>(batches.size());
}

std::uint64_t checksum(const std::vector<ag::Var>& params) { return parameter_checksum(params); }

}  // namespace

std::string to_string(ScheduleMode mode) {
  switch (mode) {
    case ScheduleMode::kJoint: return "joint";
    case ScheduleMode::kOnePassDm: return "one_pass_dm";
    case ScheduleMode::kMultiRoundDm: return "multi_round_dm";
  }
  return "?";
}

ScheduleMode schedule_mode_from_string(const std::string& name) {
  const auto n = to_lower(name);
  if (n == "joint") return ScheduleMode::kJoint;
  if (n == "one_pass_dm") return ScheduleMode::kOnePassDm;
  if (n == "multi_round_dm") return ScheduleMode::kMultiRoundDm;
  throw ConfigError("unknown schedule mode '" + name + "'");
}

void ScheduleConfig::validate() const {
  if (simultaneous_update) throw ConfigError("extractor and model must not be optimized simultaneously");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (warmup_epochs > max_epochs) throw ConfigError("warmup_epochs exceeds max_epochs");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (mode == ScheduleMode::kMultiRoundDm && rounds < 2) throw ConfigError("multi_round_dm needs rounds >= 2");
  if (mode == ScheduleMode::kOnePassDm && rounds != 1) throw ConfigError("one_pass_dm has exactly one round");
  if (extractor_epochs_per_round < 0 || model_epochs_per_round < 0) throw ConfigError("epoch budgets must be >= 0");
  if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0) || !(extractor_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (lr_warmup_fraction < 0.0 || lr_warmup_fraction > 1.0) throw ConfigError("lr_warmup_fraction must lie in [0, 1]");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
}

TrainedRun train_joint(TaskModel& model, const Corpus& train, const Corpus& dev, const ObjectiveConfig& objective,
                       const ScheduleConfig& schedule, const Interpreter& interpreter, std::uint64_t seed) {
  schedule.validate();
  objective.validate();
  if (train.empty()) throw ValidationError("training corpus is empty");
  TrainedRun run;
  run.seed = seed;
  AdamW opt(model.parameters(), {.lr = schedule.lr, .weight_decay = schedule.weight_decay});
  const auto plan = lr_plan(schedule, schedule.max_epochs * steps_per_epoch(train, schedule.batch_size));
  BestTracker best;
  long step = 0;
  int since_best = 0;
  for (int epoch = 0; epoch < schedule.max_epochs; ++epoch) {
    const bool joint = epoch >= schedule.warmup_epochs;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = joint ? "joint" : "warmup";
    if (joint) {
      const auto e = joint_epoch(model, opt, train, objective, interpreter, schedule, seed, epoch, step, plan);
      rec.l_task = e.l_task;
      rec.l_int = e.l_int;
      rec.skipped = e.skipped;
    } else {
      rec.l_task = task_epoch(model, opt, train, schedule, seed, epoch, step, plan);
    }
    rec.dev_metric = evaluate(model, dev);
    run.log.push_back(rec);
    // The alignment loss always gets a full patience window once it starts.
    if (joint && epoch == schedule.warmup_epochs && epoch > 0 && objective.alpha > 0.0) since_best = 0;
    if (best.offer(model, rec.dev_metric, epoch)) {
      since_best = 0;
    } else if (++since_best >= schedule.early_stop_patience) {
      run.stopped_early = true;
      break;
    }
  }
  best.restore(model);
  run.best_dev = best.best;
  run.best_epoch = best.epoch;
  return run;
}

double train_extractor(Extractor& extractor, const TaskModel& model, const Corpus& train, int epochs,
                       const ScheduleConfig& schedule, std::uint64_t seed) {
  AdamW opt(extractor.parameters(), {.lr = schedule.extractor_lr, .weight_decay = 0.0});
  double last = 0.0;
  for (int e = 0; e < epochs; ++e) last = extractor_epoch(extractor, opt, model, train, schedule, seed, e);
  return last;
}

TrainedRun train_multi_round_dm(TaskModel& model, Extractor& extractor, const Corpus& train, const Corpus& dev,
                                const ObjectiveConfig& objective, const ScheduleConfig& schedule, std::uint64_t seed) {
  schedule.validate();
  objective.validate();
  if (schedule.mode == ScheduleMode::kJoint) throw ConfigError("train_multi_round_dm needs a dm schedule mode");
  if (objective.method != InterpretMethod::kDm) throw ConfigError("multi-round training needs method dm");
  if (train.empty()) throw ValidationError("training corpus is empty");
  TrainedRun run;
  run.seed = seed;
  const auto theta = model.parameters();
  const auto phi = extractor.parameters();
  AdamW model_opt(theta, {.lr = schedule.lr, .weight_decay = schedule.weight_decay});
  AdamW ext_opt(phi, {.lr = schedule.extractor_lr, .weight_decay = 0.0});
  const long per_epoch = steps_per_epoch(train, schedule.batch_size);
  const auto plan =
      lr_plan(schedule, (schedule.warmup_epochs + schedule.rounds * schedule.model_epochs_per_round) * per_epoch);
  const Interpreter interpreter{.extractor = &extractor};
  BestTracker best;
  long step = 0;
  int epoch = 0;

  for (int w = 0; w < schedule.warmup_epochs; ++w, ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = "warmup";
    rec.l_task = task_epoch(model, model_opt, train, schedule, seed, epoch, step, plan);
    rec.dev_metric = evaluate(model, dev);
    best.offer(model, rec.dev_metric, epoch);
    run.log.push_back(rec);
  }

  for (int r = 0; r < schedule.rounds; ++r) {
    const auto theta_before = checksum(theta);
    for (int e = 0; e < schedule.extractor_epochs_per_round; ++e, ++epoch) {
      EpochRecord rec;
      rec.epoch = epoch;
      rec.phase = "extractor";
      rec.round = r;
      rec.extractor_loss = extractor_epoch(extractor, ext_opt, model, train, schedule, seed, epoch);
      rec.dev_metric = evaluate(model, dev);
      run.log.push_back(rec);
    }
    if (checksum(theta) != theta_before) run.frozen_model_intact = false;

    const auto phi_before = checksum(phi);
    for (int e = 0; e < schedule.model_epochs_per_round; ++e, ++epoch) {
      EpochRecord rec;
      rec.epoch = epoch;
      rec.phase = "model";
      rec.round = r;
      const auto j = joint_epoch(model, model_opt, train, objective, interpreter, schedule, seed, epoch, step, plan);
      rec.l_task = j.l_task;
      rec.l_int = j.l_int;
      rec.skipped = j.skipped;
      rec.dev_metric = evaluate(model, dev);
      best.offer(model, rec.dev_metric, epoch);
      run.log.push_back(rec);
    }
    if (checksum(phi) != phi_before) run.frozen_extractor_intact = false;
    run.round_dev.push_back(evaluate(model, dev));
  }
  best.restore(model);
  run.best_dev = best.best;
  run.best_epoch = best.epoch;
  return run;
}

std::vector<MatrixCell> run_matrix(std::span<const std::string> names, std::span<const std::uint64_t> seeds,
                                   const std::function<double(std::size_t, std::uint64_t)>& run) {
  std::vector<MatrixCell> cells;
  for (std::size_t c = 0; c < names.size(); ++c) {
    MatrixCell cell;
    cell.name = names[c];
    for (auto seed : seeds) {
      try {
        const double v = run(c, seed);
        cell.seeds.push_back(seed);
        cell.values.push_back(v);
      } catch (const std::exception& e) {
        cell.failures.push_back("seed " + std::to_string(seed) + ": " + e.what());
      }
    }
    const auto ms = mean_std(cell.values);
    cell.mean = ms.mean;
    cell.std = ms.std;
    cells.push_back(std::move(cell));
  }
  return cells;
}

}  // namespace uimer
