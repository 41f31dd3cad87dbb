#include "uimer/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "uimer/errors.hpp"
#include "uimer/metrics.hpp"

namespace uimer {

using json = nlohmann::ordered_json;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

template <typename T>
void take(const json& obj, const char* key, T& into, std::set<std::string>& seen) {
  if (!obj.contains(key)) return;
  seen.insert(key);
  into = obj.at(key).get<T>();
}

void reject_unknown(const json& obj, const std::set<std::string>& seen, const std::string& where) {
  for (const auto& [k, v] : obj.items()) {
    if (!seen.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (!is_base()) (void)interpret_method_from_string(method);
  objective.validate();
  schedule.validate();
  if (n_shot < 0) throw ConfigError("n_shot must be >= 0");
  if (mlm != "count" && mlm != "tiny") throw ConfigError("mlm must be count or tiny");
  if (model.embed_dim < 1 || model.hidden_dim < 1) throw ConfigError("model dimensions must be positive");
  if (!is_base() && objective.method == InterpretMethod::kDm) {
    if (schedule.mode == ScheduleMode::kJoint) throw ConfigError("method dm needs a dm schedule mode");
  } else if (schedule.mode != ScheduleMode::kJoint) {
    throw ConfigError("dm schedule modes need method dm");
  }
  for (const auto* p : {&train_path, &dev_path, &test_path}) {
    if (p->empty()) throw ConfigError("train, dev and test paths are required");
    if (!std::filesystem::exists(*p)) throw ConfigError("missing file " + p->string());
  }
  if (rationale_path && !std::filesystem::exists(*rationale_path)) {
    throw ConfigError("missing file " + rationale_path->string());
  }
}

ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  std::set<std::string> seen;
  try {
    std::string s;
    if (doc.contains("task")) {
      seen.insert("task");
      c.task = task_kind_from_string(doc.at("task").get<std::string>());
    }
    for (const auto& [key, field] : {std::pair{"train", &c.train_path}, std::pair{"dev", &c.dev_path},
                                     std::pair{"test", &c.test_path}}) {
      if (doc.contains(key)) {
        seen.insert(key);
        *field = resolve(base_dir, doc.at(key).get<std::string>());
      }
    }
    if (doc.contains("rationales")) {
      seen.insert("rationales");
      c.rationale_path = resolve(base_dir, doc.at("rationales").get<std::string>());
    }
    if (doc.contains("output_dir")) {
      seen.insert("output_dir");
      c.output_dir = resolve(base_dir, doc.at("output_dir").get<std::string>());
    }
    take(doc, "n_shot", c.n_shot, seen);
    take(doc, "method", c.method, seen);
    take(doc, "mlm", c.mlm, seen);
    if (!c.is_base()) c.objective.method = interpret_method_from_string(c.method);
    take(doc, "alpha", c.objective.alpha, seen);
    take(doc, "epsilon", c.objective.epsilon, seen);
    if (doc.contains("f_kind")) {
      seen.insert("f_kind");
      c.objective.f_kind = gradient_reduction_from_string(doc.at("f_kind").get<std::string>());
    }
    if (doc.contains("objective_kind")) {
      seen.insert("objective_kind");
      c.objective.objective_kind = objective_kind_from_string(doc.at("objective_kind").get<std::string>());
    }
    if (doc.contains("strategy")) {
      seen.insert("strategy");
      c.objective.strategy = strategy_kind_from_string(doc.at("strategy").get<std::string>());
    }
    take(doc, "sample_set_size", c.objective.set_size, seen);
    take(doc, "bert_top_k", c.objective.bert_top_k, seen);
    take(doc, "stop_gradient", c.objective.stop_gradient, seen);
    take(doc, "redraw_nonrationales", c.objective.redraw_nonrationales, seen);
    if (doc.contains("seed")) {
      seen.insert("seed");
      c.schedule.seeds = {doc.at("seed").get<std::uint64_t>()};
    }
    take(doc, "seeds", c.schedule.seeds, seen);

    if (doc.contains("schedule")) {
      seen.insert("schedule");
      const auto& s = doc.at("schedule");
      std::set<std::string> ss;
      if (s.contains("mode")) {
        ss.insert("mode");
        c.schedule.mode = schedule_mode_from_string(s.at("mode").get<std::string>());
      }
      take(s, "warmup_epochs", c.schedule.warmup_epochs, ss);
      take(s, "max_epochs", c.schedule.max_epochs, ss);
      take(s, "rounds", c.schedule.rounds, ss);
      take(s, "extractor_epochs_per_round", c.schedule.extractor_epochs_per_round, ss);
      take(s, "model_epochs_per_round", c.schedule.model_epochs_per_round, ss);
      take(s, "early_stop_patience", c.schedule.early_stop_patience, ss);
      take(s, "batch_size", c.schedule.batch_size, ss);
      take(s, "lr", c.schedule.lr, ss);
      take(s, "extractor_lr", c.schedule.extractor_lr, ss);
      take(s, "weight_decay", c.schedule.weight_decay, ss);
      take(s, "lr_warmup_fraction", c.schedule.lr_warmup_fraction, ss);
      take(s, "simultaneous_update", c.schedule.simultaneous_update, ss);
      reject_unknown(s, ss, "schedule");
    }
    if (doc.contains("model")) {
      seen.insert("model");
      const auto& m = doc.at("model");
      std::set<std::string> ms;
      take(m, "embed_dim", c.model.embed_dim, ms);
      take(m, "hidden_dim", c.model.hidden_dim, ms);
      take(m, "embed_init_scale", c.model.embed_init_scale, ms);
      reject_unknown(m, ms, "model");
    }
    if (doc.contains("extractor")) {
      seen.insert("extractor");
      const auto& e = doc.at("extractor");
      std::set<std::string> es;
      take(e, "hidden_dim", c.extractor.hidden_dim, es);
      take(e, "temperature", c.extractor.temperature, es);
      take(e, "lambda_sparse", c.extractor.lambda_sparse, es);
      take(e, "lambda_faith", c.extractor.lambda_faith, es);
      take(e, "init_bias", c.extractor.init_bias, es);
      reject_unknown(e, es, "extractor");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  reject_unknown(doc, seen, "config");
  c.model.kind = c.task;
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(read_file(path), path.parent_path());
}

void apply_seed_override(ExperimentConfig& config) {
  const char* env = std::getenv("UIMER_SEED");
  if (!env || !*env) return;
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(env);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("UIMER_SEED must be a comma-separated list of integers");
    }
  }
  config.schedule.seeds = std::move(seeds);
}

DataSplits load_splits(const ExperimentConfig& config) {
  DataSplits d;
  d.kind = config.task;
  d.train_pool = load_corpus(config.train_path);
  d.dev = load_corpus(config.dev_path);
  d.test = load_corpus(config.test_path);
  if (config.rationale_path) {
    const auto source = load_rationale_source(*config.rationale_path);
    d.train_pool = annotate_corpus(d.train_pool, source);
    d.dev = annotate_corpus(d.dev, source);
    d.test = annotate_corpus(d.test, source);
  }
  std::set<std::string> seen;
  std::set<std::string> labels;
  for (const auto* c : {&d.train_pool, &d.dev, &d.test}) {
    for (const auto& tok : c->vocabulary.tokens()) {
      if (seen.insert(tok).second) d.vocabulary.push_back(tok);
    }
    for (const auto& l : c->labels()) labels.insert(l);
  }
  if (d.kind == TaskKind::kSequenceLabeling) d.labels.push_back(std::string(kNullTag));
  for (const auto& l : labels) {
    if (l != kNullTag) d.labels.push_back(l);
  }
  return d;
}

ReplacementStrategy make_strategy(const ExperimentConfig& config, const TaskModel& model, const Corpus& train,
                                  std::unique_ptr<ConditionalTokenModel>& mlm_holder, std::uint64_t seed) {
  switch (config.objective.strategy) {
    case StrategyKind::kMask:
      return ReplacementStrategy::mask();
    case StrategyKind::kUniform:
      return ReplacementStrategy::uniform(model.content_tokens());
    case StrategyKind::kPrior:
      return ReplacementStrategy::prior_from(train);
    case StrategyKind::kBert:
      if (config.mlm == "tiny") {
        mlm_holder = std::make_unique<TinyMaskedLM>(train, TinyMaskedLM::Options{.seed = derive_seed(seed, 0x4d4c4d)});
      } else {
        mlm_holder = std::make_unique<CountContextModel>(train);
      }
      return ReplacementStrategy::bert(*mlm_holder, config.objective.bert_top_k);
  }
  throw ConfigError("unknown strategy");
}

Corpus training_subset(const DataSplits& data, const ExperimentConfig& config, std::uint64_t seed) {
  if (config.n_shot <= 0) return data.train_pool;
  return sample_n_shot(data.train_pool, config.n_shot, derive_seed(seed, 0x5a4d));
}

SeedResult run_seed(const DataSplits& data, const ExperimentConfig& config, std::uint64_t seed) {
  SeedResult r;
  r.seed = seed;
  r.train = training_subset(data, config, seed);
  ModelConfig mc = config.model;
  mc.kind = data.kind;
  r.model = std::make_shared<TaskModel>(mc, data.vocabulary, data.labels, derive_seed(seed, 0x4d4f44));
  if (config.is_base()) {
    ObjectiveConfig objective = config.objective;
    objective.alpha = 0.0;
    ScheduleConfig schedule = config.schedule;
    schedule.mode = ScheduleMode::kJoint;
    r.run = train_joint(*r.model, r.train, data.dev, objective, schedule, {}, seed);
  } else if (config.objective.method == InterpretMethod::kDm) {
    r.extractor = std::make_shared<Extractor>(2 * mc.hidden_dim, config.extractor, derive_seed(seed, 0x455854));
    r.run = train_multi_round_dm(*r.model, *r.extractor, r.train, data.dev, config.objective, config.schedule, seed);
  } else {
    std::unique_ptr<ConditionalTokenModel> mlm;
    const auto strategy = make_strategy(config, *r.model, r.train, mlm, seed);
    const Interpreter interpreter{.strategy = &strategy};
    r.run = train_joint(*r.model, r.train, data.dev, config.objective, config.schedule, interpreter, seed);
  }
  r.dev_metric = evaluate(*r.model, data.dev);
  r.test_metric = evaluate(*r.model, data.test);
  return r;
}

std::string run_log_jsonl(const SeedResult& result, const ExperimentConfig& config) {
  std::string out;
  for (const auto& e : result.run.log) {
    json rec;
    rec["epoch"] = e.epoch;
    rec["phase"] = e.phase;
    rec["round"] = e.round;
    rec["L_task"] = e.l_task;
    rec["L_int"] = e.l_int ? json(*e.l_int) : json(nullptr);
    if (e.extractor_loss) rec["L_extractor"] = *e.extractor_loss;
    rec["dev_metric"] = e.dev_metric;
    rec["skipped"] = e.skipped;
    out += rec.dump() + "\n";
  }
  json summary;
  summary["summary"] = true;
  summary["name"] = config.output_dir.filename().string();
  summary["method"] = config.method;
  summary["seed"] = result.seed;
  summary["n_shot"] = config.n_shot;
  summary["train_size"] = result.train.size();
  summary["best_epoch"] = result.run.best_epoch;
  summary["stopped_early"] = result.run.stopped_early;
  summary["dev_metric"] = result.dev_metric;
  summary["test_metric"] = result.test_metric;
  if (!result.run.round_dev.empty()) summary["round_dev"] = result.run.round_dev;
  out += summary.dump() + "\n";
  return out;
}

void save_extractor(const Extractor& e, int state_dim, const std::filesystem::path& path) {
  json doc;
  doc["format"] = "uimer-extractor";
  doc["version"] = 1;
  doc["state_dim"] = state_dim;
  const auto& c = e.config();
  doc["config"] = {{"hidden_dim", c.hidden_dim},       {"temperature", c.temperature},
                   {"lambda_sparse", c.lambda_sparse}, {"lambda_faith", c.lambda_faith},
                   {"init_bias", c.init_bias}};
  auto& params = doc["parameters"] = json::array();
  for (const auto& p : e.parameters()) {
    const auto& m = p.value();
    params.push_back({{"rows", m.rows()}, {"cols", m.cols()},
                      {"data", std::vector<double>(m.data(), m.data() + m.size())}});
  }
  write_file(path, doc.dump() + "\n");
}

Extractor load_extractor(const std::filesystem::path& path) {
  try {
    const auto doc = json::parse(read_file(path));
    if (doc.at("format") != "uimer-extractor" || doc.at("version") != 1) {
      throw ConfigError(path.string() + " is not a version 1 extractor checkpoint");
    }
    const auto& c = doc.at("config");
    ExtractorConfig config{.hidden_dim = c.at("hidden_dim").get<int>(),
                           .temperature = c.at("temperature").get<double>(),
                           .lambda_sparse = c.at("lambda_sparse").get<double>(),
                           .lambda_faith = c.at("lambda_faith").get<double>(),
                           .init_bias = c.at("init_bias").get<double>()};
    Extractor e(doc.at("state_dim").get<int>(), config, 0);
    auto params = e.parameters();
    const auto& stored = doc.at("parameters");
    if (stored.size() != params.size()) throw ConfigError(path.string() + ": wrong parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto rows = stored[i].at("rows").get<Eigen::Index>();
      const auto cols = stored[i].at("cols").get<Eigen::Index>();
      const auto data = stored[i].at("data").get<std::vector<double>>();
      if (rows != params[i].rows() || cols != params[i].cols() || static_cast<Eigen::Index>(data.size()) != rows * cols) {
        throw ConfigError(path.string() + ": parameter shape mismatch");
      }
      params[i].mutable_value() = Eigen::Map<const ag::Matrix>(data.data(), rows, cols);
    }
    return e;
  } catch (const json::exception& ex) {
    throw ConfigError(path.string() + ": " + ex.what());
  }
}

std::vector<SeedResult> run_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto data = load_splits(config);
  std::vector<SeedResult> results;
  for (auto seed : config.schedule.seeds) {
    auto r = run_seed(data, config, seed);
    const auto dir = config.output_dir / ("seed_" + std::to_string(seed));
    std::filesystem::create_directories(dir);
    write_file(dir / "run_log.jsonl", run_log_jsonl(r, config));
    json metrics;
    metrics["seed"] = seed;
    metrics["dev_metric"] = r.dev_metric;
    metrics["test_metric"] = r.test_metric;
    metrics["metric"] = data.kind == TaskKind::kSequenceLabeling ? "span_f1" : "accuracy";
    write_file(dir / "metrics.json", metrics.dump(2) + "\n");
    save_model(*r.model, dir / "model.json");
    if (r.extractor) save_extractor(*r.extractor, 2 * r.model->config().hidden_dim, dir / "extractor.json");
    results.push_back(std::move(r));
  }
  return results;
}

std::vector<AttributionRecord> interpret_corpus(const TaskModel& model, const Corpus& corpus,
                                                const ObjectiveConfig& objective, const ReplacementStrategy* strategy,
                                                const Extractor* extractor, std::uint64_t seed) {
  const auto method = to_string(objective.method);
  if (objective.method == InterpretMethod::kIm && strategy == nullptr) throw ConfigError("im needs a replacement strategy");
  if (objective.method == InterpretMethod::kDm && extractor == nullptr) throw ConfigError("dm needs an extractor");
  std::vector<AttributionRecord> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& ex = corpus.examples[i];
    AttributionRecord r;
    r.tokens = ex.tokens;
    r.method = method;
    r.gold_mask = ex.rationale_mask;
    r.correct = predict(model, ex) == ex.output;
    switch (objective.method) {
      case InterpretMethod::kGbGhaeini:
      case InterpretMethod::kGbMargin:
        r.per_token = *gradient_attribution(model, ex, objective.f_kind, objective.objective_kind).per_token;
        break;
      case InterpretMethod::kIm:
        try {
          const auto d = im_multi_detail(model, ex, *strategy,
                                         {.set_size = objective.set_size,
                                          .redraw_nonrationales = objective.redraw_nonrationales},
                                         derive_seed(seed, i));
          r.a_r = d.a_r;
          r.a_n = d.a_n;
        } catch (const DegenerateInputError&) {
          std::vector<double> scores;
          for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
            scores.push_back(im_single_detail(model, ex, *strategy, t, objective.set_size,
                                              derive_seed(derive_seed(seed, i), t)).score);
          }
          r.per_token = std::move(scores);
        }
        break;
      case InterpretMethod::kDm:
        r.per_token = *extractor_attribution(*extractor, model, ex.tokens, ex.pair_boundary).per_token;
        break;
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string attribution_record_json(const AttributionRecord& r) {
  json j;
  j["tokens"] = r.tokens;
  j["method"] = r.method;
  if (r.per_token) j["per_token"] = *r.per_token;
  if (r.a_r && r.a_n) j["multi_token"] = {{"a_R", *r.a_r}, {"a_N", *r.a_n}};
  j["gold_mask"] = r.gold_mask;
  j["correct"] = r.correct;
  return j.dump();
}

std::vector<AttributionRecord> parse_attribution_dump(const std::string& text) {
  std::vector<AttributionRecord> out;
  std::stringstream ss(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(ss, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      AttributionRecord r;
      r.tokens = j.at("tokens").get<std::vector<std::string>>();
      r.method = j.at("method").get<std::string>();
      if (j.contains("per_token")) r.per_token = j.at("per_token").get<std::vector<double>>();
      if (j.contains("multi_token")) {
        r.a_r = j.at("multi_token").at("a_R").get<double>();
        r.a_n = j.at("multi_token").at("a_N").get<double>();
      }
      r.gold_mask = j.at("gold_mask").get<std::vector<int>>();
      r.correct = j.at("correct").get<bool>();
      if (r.per_token.has_value() == r.a_r.has_value()) {
        throw ParseError("record needs exactly one of per_token and multi_token", n);
      }
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(std::string("attribution record: ") + e.what(), n);
    }
  }
  return out;
}

std::optional<std::pair<double, double>> record_pair(const AttributionRecord& record) {
  if (record.a_r && record.a_n) return std::pair{*record.a_r, *record.a_n};
  if (!record.per_token) return std::nullopt;
  return masked_means(*record.per_token, record.gold_mask);
}

Diagnostics diagnose_dump(const std::vector<AttributionRecord>& records) {
  std::vector<DiagnosticRecord> rows;
  int excluded = 0;
  for (const auto& r : records) {
    const auto pair = record_pair(r);
    if (!pair) {
      ++excluded;
      continue;
    }
    rows.push_back({pair->first, pair->second, r.correct});
  }
  return diagnose_records(rows, excluded);
}

std::vector<ReportRow> report_from_logs(const std::vector<std::filesystem::path>& run_logs) {
  std::map<std::string, ReportRow> rows;
  std::vector<std::string> order;
  for (const auto& path : run_logs) {
    std::stringstream ss(read_file(path));
    std::string line;
    std::optional<json> summary;
    std::size_t n = 0;
    while (std::getline(ss, line)) {
      ++n;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what(), n);
      }
      if (j.value("summary", false)) summary = j;
    }
    if (!summary) throw ValidationError(path.string() + " has no summary record");
    const auto name = summary->at("name").get<std::string>();
    if (!rows.contains(name)) {
      order.push_back(name);
      rows[name].name = name;
    }
    rows[name].seeds.push_back(summary->at("seed").get<std::uint64_t>());
    rows[name].values.push_back(summary->at("test_metric").get<double>());
  }
  std::vector<ReportRow> out;
  for (const auto& name : order) {
    auto row = rows[name];
    const auto ms = mean_std(row.values);
    row.mean = ms.mean;
    row.std = ms.std;
    out.push_back(std::move(row));
  }
  return out;
}

std::string format_report(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  out << std::left << std::setw(static_cast<int>(width)) << "config" << "  seeds  mean      std\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(static_cast<int>(width)) << r.name << "  " << std::setw(5) << r.values.size()
        << "  " << std::fixed << std::setprecision(4) << std::setw(8) << r.mean << "  " << r.std << "\n";
  }
  return out.str();
}

}  // namespace uimer
