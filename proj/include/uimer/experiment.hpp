#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uimer/attribution.hpp"
#include "uimer/corpus.hpp"
#include "uimer/diagnostics.hpp"
#include "uimer/mlm.hpp"
#include "uimer/rationale_loss.hpp"
#include "uimer/schedule.hpp"
#include "uimer/taskmodel.hpp"

namespace uimer {

// Everything one training cell needs. `method` is "base" or an
// InterpretMethod name.
struct ExperimentConfig {
  TaskKind task = TaskKind::kSingleClassification;
  std::filesystem::path train_path;
  std::filesystem::path dev_path;
  std::filesystem::path test_path;
  std::optional<std::filesystem::path> rationale_path;  // annotate the splits when set
  int n_shot = 0;                                       // 0 keeps the whole training file
  std::string method = "base";
  ObjectiveConfig objective;
  ScheduleConfig schedule;
  ModelConfig model;
  ExtractorConfig extractor;
  std::string mlm = "count";  // count or tiny, for the bert strategy
  std::filesystem::path output_dir = "runs";

  bool is_base() const { return method == "base"; }
  void validate() const;
};

// Reads the JSON config; relative paths resolve against the file's directory.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir = {});
// UIMER_SEED (comma-separated) replaces the configured seeds when set.
void apply_seed_override(ExperimentConfig& config);

struct DataSplits {
  TaskKind kind = TaskKind::kSingleClassification;
  Corpus train_pool;
  Corpus dev;
  Corpus test;
  std::vector<std::string> vocabulary;
  std::vector<std::string> labels;
};

DataSplits load_splits(const ExperimentConfig& config);

struct SeedResult {
  std::uint64_t seed = 0;
  Corpus train;  // the n-shot subset actually used
  TrainedRun run;
  double dev_metric = 0.0;
  double test_metric = 0.0;
  std::shared_ptr<TaskModel> model;
  std::shared_ptr<Extractor> extractor;  // dm only
};

// The n-shot training set run_seed draws for `seed`.
Corpus training_subset(const DataSplits& data, const ExperimentConfig& config, std::uint64_t seed);

// Samples, builds and trains one (config, seed) cell in memory.
SeedResult run_seed(const DataSplits& data, const ExperimentConfig& config, std::uint64_t seed);

// Replacement strategy for `config`. The mlm backend, when needed, is stored
// in `mlm_holder`.
ReplacementStrategy make_strategy(const ExperimentConfig& config, const TaskModel& model, const Corpus& train,
                                  std::unique_ptr<ConditionalTokenModel>& mlm_holder, std::uint64_t seed);

void save_extractor(const Extractor& extractor, int state_dim, const std::filesystem::path& path);
Extractor load_extractor(const std::filesystem::path& path);

// Run log lines: one record per epoch, then a summary record.
std::string run_log_jsonl(const SeedResult& result, const ExperimentConfig& config);

// Trains every seed and writes <output_dir>/seed_<s>/{run_log.jsonl,
// metrics.json, model.json}. Returns the per-seed results.
std::vector<SeedResult> run_experiment(const ExperimentConfig& config);

struct AttributionRecord {
  std::vector<std::string> tokens;
  std::string method;
  std::optional<std::vector<double>> per_token;
  std::optional<double> a_r, a_n;
  std::vector<int> gold_mask;
  bool correct = false;
};

// Attribution records for every example of `corpus`: gradient scores for gb
// methods, (a_R, a_N) for im and extractor scores for dm. im examples without a
// contrast fall back to single-token scores. `strategy` is needed for im,
// `extractor` for dm.
std::vector<AttributionRecord> interpret_corpus(const TaskModel& model, const Corpus& corpus,
                                                const ObjectiveConfig& objective, const ReplacementStrategy* strategy,
                                                const Extractor* extractor, std::uint64_t seed);

std::string attribution_record_json(const AttributionRecord& record);
std::vector<AttributionRecord> parse_attribution_dump(const std::string& text);
// (a_R, a_N) of a record: direct for im, masked means of per-token scores
// otherwise; nullopt when it has no contrast.
std::optional<std::pair<double, double>> record_pair(const AttributionRecord& record);
Diagnostics diagnose_dump(const std::vector<AttributionRecord>& records);

struct ReportRow {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;
};

// Groups summary records of run logs by their config name.
std::vector<ReportRow> report_from_logs(const std::vector<std::filesystem::path>& run_logs);
std::string format_report(const std::vector<ReportRow>& rows);

}  // namespace uimer
