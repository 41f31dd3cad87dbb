#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "uimer/corpus.hpp"
#include "uimer/errors.hpp"
#include "uimer/experiment.hpp"
#include "uimer/metrics.hpp"
#include "uimer/synthetic.hpp"

namespace fs = std::filesystem;
using namespace uimer;

namespace {

constexpr int kValidationExit = 1;
constexpr int kRuntimeExit = 2;

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to `path`, or stdout when it is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

std::vector<fs::path> collect_run_logs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> logs;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(in)) {
        if (e.is_regular_file() && e.path().filename() == "run_log.jsonl") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      logs.insert(logs.end(), found.begin(), found.end());
    } else if (fs::exists(in)) {
      logs.emplace_back(in);
    } else {
      throw ValidationError("no such run log or directory: " + in);
    }
  }
  if (logs.empty()) throw ValidationError("no run_log.jsonl files found");
  return logs;
}

struct AnnotateArgs {
  std::string input, rationales, output;
};

void cmd_annotate(const AnnotateArgs& a) {
  const auto source = load_rationale_source(a.rationales);
  emit(a.output, serialize_corpus(annotate_corpus(load_corpus(a.input), source)));
}

struct SampleArgs {
  std::string input, output;
  int n = 1;
  std::uint64_t seed = 0;
};

void cmd_sample(const SampleArgs& a) {
  emit(a.output, serialize_corpus(sample_n_shot(load_corpus(a.input), a.n, a.seed)));
}

struct TrainArgs {
  std::string config, output_dir;
  int n_shot = -1;
};

void cmd_train(const TrainArgs& a) {
  auto config = load_experiment_config(a.config);
  if (!a.output_dir.empty()) config.output_dir = a.output_dir;
  if (a.n_shot >= 0) config.n_shot = a.n_shot;
  apply_seed_override(config);
  const auto results = run_experiment(config);
  std::vector<fs::path> logs;
  for (const auto& r : results) {
    std::cout << "seed " << r.seed << "  dev " << r.dev_metric << "  test " << r.test_metric << "\n";
    logs.push_back(config.output_dir / ("seed_" + std::to_string(r.seed)) / "run_log.jsonl");
  }
  std::cout << format_report(report_from_logs(logs));
}

struct InterpretArgs {
  std::string config, checkpoint, corpus, output;
  std::uint64_t seed = 0;
};

void cmd_interpret(const InterpretArgs& a) {
  const auto config = load_experiment_config(a.config);
  if (config.is_base()) throw ConfigError("interpret needs a config whose method is not base");
  const fs::path dir = a.checkpoint;
  const auto model = load_model(dir / "model.json");
  const auto corpus = a.corpus.empty() ? load_splits(config).test : load_corpus(a.corpus);
  std::optional<Extractor> extractor;
  std::optional<ReplacementStrategy> strategy;
  std::unique_ptr<ConditionalTokenModel> mlm;
  if (config.objective.method == InterpretMethod::kDm) {
    extractor = load_extractor(dir / "extractor.json");
  } else if (config.objective.method == InterpretMethod::kIm) {
    const auto data = load_splits(config);
    strategy = make_strategy(config, model, training_subset(data, config, a.seed), mlm, a.seed);
  }
  const auto records = interpret_corpus(model, corpus, config.objective, strategy ? &*strategy : nullptr,
                                        extractor ? &*extractor : nullptr, a.seed);
  std::string out;
  for (const auto& r : records) out += attribution_record_json(r) + "\n";
  emit(a.output, out);
}

struct DiagnoseArgs {
  std::string input;
  bool json = false;
};

void cmd_diagnose(const DiagnoseArgs& a) {
  const auto d = diagnose_dump(parse_attribution_dump(slurp(a.input)));
  if (a.json) {
    nlohmann::json j{{"acc_when_aR_gt_aN", d.acc_when_ar_gt_an}, {"acc_when_aR_le_aN", d.acc_when_ar_le_an},
                     {"fraction_aR_gt_aN", d.fraction_ar_gt_an}, {"overall", d.overall},
                     {"n_gt", d.n_gt},                           {"n_le", d.n_le},
                     {"excluded", d.excluded}};
    std::cout << j.dump() << "\n";
    return;
  }
  std::cout << "a_R > a_N   acc " << d.acc_when_ar_gt_an << "  (" << d.n_gt << " examples)\n"
            << "a_R <= a_N  acc " << d.acc_when_ar_le_an << "  (" << d.n_le << " examples)\n"
            << "fraction a_R > a_N  " << d.fraction_ar_gt_an << "\n"
            << "overall acc  " << d.overall << "\n"
            << "excluded  " << d.excluded << "\n";
}

struct ReportArgs {
  std::vector<std::string> inputs;
  bool jsonl = false;
};

void cmd_report(const ReportArgs& a) {
  const auto rows = report_from_logs(collect_run_logs(a.inputs));
  if (!a.jsonl) {
    std::cout << format_report(rows);
    return;
  }
  for (const auto& r : rows) {
    nlohmann::json j{{"name", r.name}, {"seeds", r.seeds}, {"values", r.values}, {"mean", r.mean}, {"std", r.std}};
    std::cout << j.dump() << "\n";
  }
}

struct SynthArgs {
  std::string task = "ic", output;
  std::uint64_t seed = 2023;
};

void cmd_synth(const SynthArgs& a) {
  const auto kind = task_kind_from_string(a.task);
  if (kind == TaskKind::kPairClassification) throw ConfigError("synth supports ic and sf only");
  const auto bench = kind == TaskKind::kSingleClassification ? make_classification_benchmark({}, a.seed)
                                                             : make_labeling_benchmark({}, a.seed);
  write_benchmark(bench, a.output);
  std::cout << "wrote " << bench.pool.size() << " pool, " << bench.dev.size() << " dev, " << bench.test.size()
            << " test examples to " << a.output << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rationale-guided training for small text models"};
  app.require_subcommand(1);

  AnnotateArgs annotate_args;
  auto* annotate = app.add_subcommand("annotate", "Mark rationale tokens of a corpus");
  annotate->add_option("-i,--input", annotate_args.input, "corpus (.jsonl)")->required()->check(CLI::ExistingFile);
  annotate->add_option("-r,--rationales", annotate_args.rationales, "rationale source (.json)")
      ->required()
      ->check(CLI::ExistingFile);
  annotate->add_option("-o,--output", annotate_args.output, "output corpus, stdout by default");

  SampleArgs sample_args;
  auto* sample = app.add_subcommand("sample", "Draw an n-shot subset");
  sample->add_option("-i,--input", sample_args.input, "corpus (.jsonl)")->required()->check(CLI::ExistingFile);
  sample->add_option("-n,--n-shot", sample_args.n, "examples per class or slot")->required()->check(CLI::PositiveNumber);
  sample->add_option("-s,--seed", sample_args.seed, "sampling seed");
  sample->add_option("-o,--output", sample_args.output, "output corpus, stdout by default");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train every seed of an experiment config");
  train->add_option("-c,--config", train_args.config, "experiment config (.json)")->required()->check(CLI::ExistingFile);
  train->add_option("-o,--output-dir", train_args.output_dir, "overrides output_dir");
  train->add_option("-n,--n-shot", train_args.n_shot, "overrides n_shot");

  InterpretArgs interpret_args;
  auto* interpret = app.add_subcommand("interpret", "Dump attribution scores of a trained checkpoint");
  interpret->add_option("-c,--config", interpret_args.config, "experiment config used for training")
      ->required()
      ->check(CLI::ExistingFile);
  interpret->add_option("-k,--checkpoint", interpret_args.checkpoint, "seed directory written by train")
      ->required()
      ->check(CLI::ExistingDirectory);
  interpret->add_option("-i,--corpus", interpret_args.corpus, "corpus to interpret, the test split by default");
  interpret->add_option("-s,--seed", interpret_args.seed, "seed of the checkpoint");
  interpret->add_option("-o,--output", interpret_args.output, "attributions.jsonl, stdout by default");

  DiagnoseArgs diagnose_args;
  auto* diagnose = app.add_subcommand("diagnose", "Accuracy split by a_R > a_N");
  diagnose->add_option("-i,--input", diagnose_args.input, "attribution dump")->required()->check(CLI::ExistingFile);
  diagnose->add_flag("--json", diagnose_args.json, "print one JSON record");

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "Mean and unbiased std per config over run logs");
  report->add_option("inputs", report_args.inputs, "run logs or directories to search")->required();
  report->add_flag("--jsonl", report_args.jsonl, "one JSON record per config");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Write a planted-rationale benchmark");
  synth->add_option("-t,--task", synth_args.task, "ic or sf")->check(CLI::IsMember({"ic", "sf"}));
  synth->add_option("-s,--seed", synth_args.seed, "generator seed");
  synth->add_option("-o,--output", synth_args.output, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kValidationExit;
  }

  try {
    if (*annotate) cmd_annotate(annotate_args);
    if (*sample) cmd_sample(sample_args);
    if (*train) cmd_train(train_args);
    if (*interpret) cmd_interpret(interpret_args);
    if (*diagnose) cmd_diagnose(diagnose_args);
    if (*report) cmd_report(report_args);
    if (*synth) cmd_synth(synth_args);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidationExit;
  } catch (const SamplingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidationExit;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return kRuntimeExit;
  }
  return 0;
}
