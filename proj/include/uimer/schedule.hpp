#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uimer/attribution.hpp"
#include "uimer/corpus.hpp"
#include "uimer/rationale_loss.hpp"
#include "uimer/taskmodel.hpp"

namespace uimer {

enum class ScheduleMode { kJoint, kOnePassDm, kMultiRoundDm };

std::string to_string(ScheduleMode mode);
ScheduleMode schedule_mode_from_string(const std::string& name);

struct ScheduleConfig {
  ScheduleMode mode = ScheduleMode::kJoint;
  int warmup_epochs = 0;
  int max_epochs = 70;
  int rounds = 1;
  int extractor_epochs_per_round = 10;
  int model_epochs_per_round = 20;
  int early_stop_patience = 7;
  int batch_size = 24;
  double lr = 1e-3;
  double extractor_lr = 1e-2;
  double weight_decay = 0.01;
  double lr_warmup_fraction = 0.1;  // share of steps spent ramping the learning rate
  bool simultaneous_update = false;  // only accepted to be rejected
  std::vector<std::uint64_t> seeds{55, 1988, 12333, 42};

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  std::string phase;  // warmup, joint, extractor, model
  int round = 0;
  double l_task = 0.0;
  std::optional<double> l_int;
  std::optional<double> extractor_loss;
  double dev_metric = 0.0;
  int skipped = 0;
};

struct TrainedRun {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> log;
  double best_dev = 0.0;
  int best_epoch = -1;
  bool stopped_early = false;
  std::vector<double> round_dev;  // dev metric after each round
  bool frozen_model_intact = true;      // theta unchanged in every extractor phase
  bool frozen_extractor_intact = true;  // phi unchanged in every model phase
};

// Warm-up epochs on the task loss, then the combined objective, with early
// stopping on the dev metric. The model ends at its best dev parameters.
TrainedRun train_joint(TaskModel& model, const Corpus& train, const Corpus& dev, const ObjectiveConfig& objective,
                       const ScheduleConfig& schedule, const Interpreter& interpreter, std::uint64_t seed);

// Warm-up, then rounds of extractor training (theta frozen) followed by
// model training on the combined objective (phi frozen).
TrainedRun train_multi_round_dm(TaskModel& model, Extractor& extractor, const Corpus& train, const Corpus& dev,
                                const ObjectiveConfig& objective, const ScheduleConfig& schedule, std::uint64_t seed);

// Trains the extractor alone against a fixed model; returns the last epoch's
// mean objective.
double train_extractor(Extractor& extractor, const TaskModel& model, const Corpus& train, int epochs,
                       const ScheduleConfig& schedule, std::uint64_t seed);

struct MatrixCell {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;
  std::vector<std::string> failures;  // one entry per failed seed
};

// Runs every (config, seed) pair; failures are recorded per cell.
std::vector<MatrixCell> run_matrix(std::span<const std::string> names, std::span<const std::uint64_t> seeds,
                                   const std::function<double(std::size_t, std::uint64_t)>& run);

}  // namespace uimer
