// One PASS/FAIL line per acceptance criterion. Exit status is non-zero when
// any criterion fails.

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "support/oracles.hpp"
#include "uimer/attribution.hpp"
#include "uimer/corpus.hpp"
#include "uimer/diagnostics.hpp"
#include "uimer/errors.hpp"
#include "uimer/experiment.hpp"
#include "uimer/metrics.hpp"
#include "uimer/mlm.hpp"
#include "uimer/random.hpp"
#include "uimer/rationale_loss.hpp"

using namespace uimer;
using namespace uimer::testing;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = UIMER_SOURCE_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- 1 -------------------------------------------------------------------

AnnotatedExample random_example(TaskKind kind, Rng& rng) {
  const auto vocab = fixture_vocabulary();
  const std::size_t n = 3 + rng.below(6);
  AnnotatedExample ex;
  for (std::size_t i = 0; i < n; ++i) ex.tokens.push_back(vocab[rng.below(vocab.size())]);
  // at least one rationale and at least as many non-rationales
  const std::size_t r = 1 + rng.below(n / 2);
  ex.rationale_mask.assign(n, 0);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(std::span(order));
  for (std::size_t i = 0; i < r; ++i) ex.rationale_mask[order[i]] = 1;
  if (kind == TaskKind::kSequenceLabeling) {
    const std::vector<std::string> tags{"O", "ITEM", "LIST"};
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(tags[rng.below(3)]);
    ex.output = out;
  } else if (kind == TaskKind::kPairClassification) {
    const std::vector<std::string> labels{"entail", "neutral", "contradict"};
    ex.output = labels[rng.below(3)];
    ex.pair_boundary = 1 + rng.below(n - 1);
  } else {
    const std::vector<std::string> labels{"AddToPlaylist", "PlayMusic", "Other"};
    ex.output = labels[rng.below(3)];
  }
  return ex;
}

Outcome criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20230701);
  const auto vocab = fixture_vocabulary();
  std::vector<AnnotatedExample> background;
  for (int i = 0; i < 20; ++i) background.push_back(random_example(TaskKind::kSingleClassification, rng));
  const auto corpus = Corpus::from_examples(background);
  const CountContextModel mlm(corpus);
  const ReplacementStrategy strategies[] = {ReplacementStrategy::mask(), ReplacementStrategy::bert(mlm, 4),
                                            ReplacementStrategy::prior_from(corpus),
                                            ReplacementStrategy::uniform(vocab)};
  const TaskKind kinds[] = {TaskKind::kSingleClassification, TaskKind::kSequenceLabeling,
                            TaskKind::kPairClassification};
  double worst = 0.0;
  int checked = 0;
  for (int f = 0; f < 100; ++f) {
    const auto kind = kinds[f % 3];
    const auto model = fixture_model(kind, 1000 + static_cast<std::uint64_t>(f));
    const auto ex = random_example(kind, rng);
    const auto& strategy = strategies[rng.below(4)];
    const double p = reference_gold_probability(model, ex);
    const int set_size = 1 + static_cast<int>(rng.below(6));
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
      const auto d = im_single_detail(model, ex, strategy, i, set_size, derive_seed(f, i));
      const double want = reference_log2_odds(p) - reference_log2_odds(brute_force_m(model, ex, d.set));
      worst = std::max(worst, std::abs(d.score - want));
      ++checked;
    }
    const auto d = im_multi_detail(model, ex, strategy, {.set_size = set_size}, static_cast<std::uint64_t>(f));
    const double want_r = reference_log2_odds(p) - reference_log2_odds(brute_force_m(model, ex, d.set_r));
    const double want_n = reference_log2_odds(p) - reference_log2_odds(brute_force_m(model, ex, d.set_n));
    worst = std::max({worst, std::abs(d.a_r - want_r), std::abs(d.a_n - want_n)});
    checked += 2;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 60.0, std::to_string(checked) + " scores over 100 fixtures, max |diff| " +
                                            sci(worst) + ", " + fmt(secs, 1) + "s"};
}

// ---- 2 -------------------------------------------------------------------

Outcome criterion_2() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_attr = 0.0;
  for (auto kind : {TaskKind::kSingleClassification, TaskKind::kSequenceLabeling, TaskKind::kPairClassification}) {
    const auto model = fixture_model(kind, 23);
    const auto ex = fixture_example(kind);
    for (auto objective : {ObjectiveKind::kGoldLogProb, ObjectiveKind::kTaskLoss}) {
      const auto g = fd_input_gradient(model, ex, objective);
      const Eigen::VectorXd want_sum = g.rowwise().sum();
      const Eigen::VectorXd want_l1 = g.cwiseAbs().rowwise().sum();
      const auto sum = *gradient_attribution(model, ex, GradientReduction::kSum, objective).per_token;
      const auto l1 = *gradient_attribution(model, ex, GradientReduction::kL1, objective).per_token;
      worst_attr = std::max(worst_attr, relative_error(Eigen::Map<const Eigen::VectorXd>(sum.data(), want_sum.size()),
                                                       want_sum));
      worst_attr = std::max(worst_attr, relative_error(Eigen::Map<const Eigen::VectorXd>(l1.data(), want_l1.size()),
                                                       want_l1));
    }
  }

  double worst_obj = 0.0;
  const auto strategy = ReplacementStrategy::uniform(fixture_vocabulary());
  for (auto method : {InterpretMethod::kGbGhaeini, InterpretMethod::kGbMargin, InterpretMethod::kIm,
                      InterpretMethod::kDm}) {
    auto model = fixture_model(TaskKind::kSingleClassification, 29, 2, 1);
    const std::vector<AnnotatedExample> batch{
        fixture_example(TaskKind::kSingleClassification),
        make_example({"play", "jazz", "now"}, std::string("PlayMusic"), {1, 1, 0})};
    const Extractor extractor(2, {}, 8);
    ObjectiveConfig config;
    config.method = method;
    config.alpha = 0.7;
    config.epsilon = 3.0;
    config.set_size = 3;
    const Interpreter interp{.strategy = &strategy, .extractor = &extractor};
    auto params = model.parameters();
    const auto analytic = ag::grad(combined_objective(model, batch, config, interp, 4).total, params);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto f = [&](const Eigen::MatrixXd& at) {
        const ag::Matrix saved = params[k].value();
        params[k].mutable_value() = at;
        const double v = combined_objective(model, batch, config, interp, 4).total.item();
        params[k].mutable_value() = saved;
        return v;
      };
      worst_obj = std::max(worst_obj, relative_error(analytic[k].value(), central_difference(f, params[k].value())));
    }
  }
  const double secs = seconds_since(t0);
  return {worst_attr <= 1e-4 && worst_obj <= 1e-3 && secs < 120.0,
          "attribution max rel err " + sci(worst_attr) + " (3 shapes), combined objective max rel err " +
              sci(worst_obj) + ", " + fmt(secs, 1) + "s"};
}

// ---- 3 -------------------------------------------------------------------

Outcome criterion_3() {
  Rng rng(99);
  int invariance_bad = 0, iff_bad = 0, dm_bad = 0;
  const double eps_machine = std::numeric_limits<double>::epsilon();
  for (int i = 0; i < 1000; ++i) {
    const double a_r = rng.uniform(-10, 10), a_n = rng.uniform(-10, 10), c = rng.uniform(-100, 100);
    const double eps = rng.uniform(0.01, 10);
    const double base = l_int_im(a_r, a_n, eps);
    const double shifted = l_int_im(a_r + c, a_n + c, eps);
    // the shift passes through two roundings of a_R + c and a_N + c
    if (std::abs(shifted - base) > 4 * eps_machine * (std::abs(c) + 16)) ++invariance_bad;
    if ((base == 0.0) != (a_r >= a_n + eps)) ++iff_bad;
  }
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.below(8);
    std::vector<double> a(n);
    std::vector<int> mask(n, 0);
    mask[0] = 1;
    mask[1] = 0;
    for (std::size_t k = 2; k < n; ++k) mask[k] = rng.below(2) ? 1 : 0;
    for (auto& v : a) v = rng.uniform(0.05, 1.0);
    if (i % 2 == 0) {
      // push rationales above every other score
      for (std::size_t k = 0; k < n; ++k) {
        if (mask[k]) a[k] += 1.0;
      }
    }
    double min_r = 1e300, max_n = -1e300;
    for (std::size_t k = 0; k < n; ++k) {
      if (mask[k]) min_r = std::min(min_r, a[k]);
      else max_n = std::max(max_n, a[k]);
    }
    const auto loss = l_int_dm(a, mask);
    if (!loss || ((loss->value == 0.0) != (min_r >= max_n))) ++dm_bad;
  }
  return {invariance_bad == 0 && iff_bad == 0 && dm_bad == 0,
          "translation invariance violations " + std::to_string(invariance_bad) + "/1000, im zero-iff violations " +
              std::to_string(iff_bad) + "/1000, dm zero-iff violations " + std::to_string(dm_bad) + "/1000"};
}

// ---- 4, 5, 6, 8 ----------------------------------------------------------

struct Cell {
  ExperimentConfig config;
  DataSplits data;
  std::vector<SeedResult> results;
  double mean_test = 0.0;
};

Cell train_cell(const std::string& name, int n_shot, std::function<void(ExperimentConfig&)> tweak = {}) {
  Cell cell;
  cell.config = load_experiment_config(kSource / "configs" / (name + ".json"));
  cell.config.n_shot = n_shot;
  if (tweak) tweak(cell.config);
  cell.config.validate();
  cell.data = load_splits(cell.config);
  std::vector<double> v;
  for (auto seed : cell.config.schedule.seeds) {
    cell.results.push_back(run_seed(cell.data, cell.config, seed));
    v.push_back(cell.results.back().test_metric);
  }
  cell.mean_test = mean_std(v).mean;
  return cell;
}

struct Trained {
  std::map<std::string, Cell> cells;  // "<config>_<shot>"
  double seconds = 0.0;
};

Trained train_all() {
  const auto t0 = std::chrono::steady_clock::now();
  Trained t;
  for (const char* name : {"ic_base", "ic_im", "sf_base", "sf_dm"}) {
    for (int shot : {1, 3}) t.cells.emplace(std::string(name) + "_" + std::to_string(shot), train_cell(name, shot));
  }
  t.seconds = seconds_since(t0);
  return t;
}

Outcome criterion_4(const Trained& t) {
  bool pass = t.seconds < 600.0;
  std::string detail;
  for (const auto& [guided, base] : {std::pair{"ic_im", "ic_base"}, std::pair{"sf_dm", "sf_base"}}) {
    for (int shot : {1, 3}) {
      const auto s = "_" + std::to_string(shot);
      const double g = t.cells.at(guided + s).mean_test, b = t.cells.at(base + s).mean_test;
      const double gain = 100.0 * (g - b);
      pass = pass && gain >= 3.0;
      detail += std::string(guided) + " " + std::to_string(shot) + "-shot " + fmt(g) + " vs base " + fmt(b) + " (" +
                (gain >= 0 ? "+" : "") + fmt(gain, 2) + " pts); ";
    }
  }
  return {pass, detail + "training " + fmt(t.seconds, 1) + "s"};
}

double first_joint_l_int(const SeedResult& r) {
  for (const auto& e : r.run.log) {
    if (e.phase == "joint") return e.l_int.value_or(std::nan(""));
  }
  return std::nan("");
}

Outcome criterion_5(const Trained& t) {
  // canonical setting: 3-shot classification with the shipped warm-up length
  std::string detail;
  bool pass = false;
  for (int shot : {3, 1}) {
    const auto& warm = t.cells.at("ic_im_" + std::to_string(shot));
    const auto cold = train_cell("ic_im", shot, [](ExperimentConfig& c) { c.schedule.warmup_epochs = 0; });
    double w = 0.0, c = 0.0;
    for (std::size_t i = 0; i < warm.results.size(); ++i) {
      w += first_joint_l_int(warm.results[i]) / static_cast<double>(warm.results.size());
      c += first_joint_l_int(cold.results[i]) / static_cast<double>(cold.results.size());
    }
    if (shot == 3) pass = w < c;
    detail += std::to_string(shot) + "-shot" + (shot == 3 ? " (decisive)" : " (reported)") + ": first joint L_int " +
              fmt(w) + " with warm-up (" + std::to_string(warm.config.schedule.warmup_epochs) + " epochs) vs " +
              fmt(c) + " without; ";
  }
  return {pass, detail};
}

bool non_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] < v[i - 1]) return false;
  }
  return true;
}

Outcome criterion_6(const Trained& t) {
  std::string detail;
  bool pass = false;
  for (int shot : {3, 1}) {
    const auto& cell = t.cells.at("sf_dm_" + std::to_string(shot));
    int rising = 0;
    bool frozen = true;
    std::string rounds;
    for (const auto& r : cell.results) {
      if (r.run.round_dev.size() == 3 && non_decreasing(r.run.round_dev)) ++rising;
      frozen = frozen && r.run.frozen_model_intact && r.run.frozen_extractor_intact;
      rounds += "[";
      for (std::size_t i = 0; i < r.run.round_dev.size(); ++i) rounds += (i ? " " : "") + fmt(r.run.round_dev[i], 3);
      rounds += "]";
    }
    if (shot == 3) pass = rising >= 3 && frozen;
    detail += std::to_string(shot) + "-shot" + (shot == 3 ? " (decisive)" : " (reported)") + ": non-decreasing in " +
              std::to_string(rising) + "/4 seeds " + rounds + ", freezing " + (frozen ? "held" : "BROKEN") + "; ";
  }
  return {pass, detail};
}

Outcome criterion_8(const Trained& t) {
  double worst_identity = 0.0;
  int runs = 0;
  std::string detail;
  bool direction = false;
  auto check_identity = [&](const Diagnostics& d) {
    worst_identity = std::max(worst_identity, std::abs(d.overall - (d.fraction_ar_gt_an * d.acc_when_ar_gt_an +
                                                                    (1 - d.fraction_ar_gt_an) * d.acc_when_ar_le_an)));
    ++runs;
  };
  for (int shot : {3, 1}) {
    const auto& cell = t.cells.at("ic_im_" + std::to_string(shot));
    double gap = 0.0, frac = 0.0;
    for (const auto& r : cell.results) {
      std::unique_ptr<ConditionalTokenModel> mlm;
      const auto strategy = make_strategy(cell.config, *r.model, r.train, mlm, r.seed);
      const auto d = diagnose_dump(interpret_corpus(*r.model, cell.data.test, cell.config.objective, &strategy,
                                                    nullptr, r.seed));
      check_identity(d);
      gap += (d.acc_when_ar_gt_an - d.acc_when_ar_le_an) / 4.0;
      frac += d.fraction_ar_gt_an / 4.0;
    }
    if (shot == 3) direction = gap > 0.0;
    detail += "im " + std::to_string(shot) + "-shot" + (shot == 3 ? " (decisive)" : " (reported)") +
              ": mean acc_gt - acc_le " + fmt(gap) + ", mean fraction a_R > a_N " + fmt(frac) + "; ";
  }
  for (int shot : {1, 3}) {
    const auto& cell = t.cells.at("sf_dm_" + std::to_string(shot));
    for (const auto& r : cell.results) {
      check_identity(diagnose_dump(
          interpret_corpus(*r.model, cell.data.test, cell.config.objective, nullptr, r.extractor.get(), r.seed)));
    }
  }
  return {worst_identity <= 1e-9 && direction,
          detail + "identity max |diff| " + sci(worst_identity) + " over " + std::to_string(runs) + " runs"};
}

// ---- 7 -------------------------------------------------------------------

Outcome criterion_7() {
  const auto sf = load_rationale_source(kSource / "data/snips_sf_patterns.json");
  const auto ic = load_rationale_source(kSource / "data/snips_ic_keywords.json");
  auto marked = [](const AnnotatedExample& ex) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
      if (ex.rationale_mask[i]) out.push_back(ex.tokens[i]);
    }
    return out;
  };
  const auto rated = annotate(tokenize("rate the current essay 2 out of 6"), std::vector<std::string>(8, "O"), sf);
  const auto added = annotate(tokenize("add step to me to the 50 clásicos playlist"), std::string("AddToPlaylist"), ic);
  const bool table = marked(rated) == std::vector<std::string>{"rate", "out", "of"} &&
                     marked(added) == std::vector<std::string>{"add", "playlist"};
  std::ifstream in(kSource / "tests/data/sf_pattern_sentences.jsonl");
  std::string line;
  int total = 0, agree = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const auto tokens = j.at("tokens").get<std::vector<std::string>>();
    const auto ex = annotate(tokens, std::vector<std::string>(tokens.size(), "O"), sf);
    ++total;
    if (ex.rationale_mask == j.at("rationale_mask").get<std::vector<int>>()) ++agree;
  }
  return {table && total == 50 && agree == total,
          std::string("reference masks ") + (table ? "reproduced" : "MISMATCH") + ", pattern-family corpus " +
              std::to_string(agree) + "/" + std::to_string(total)};
}

// ---- 9 -------------------------------------------------------------------

Outcome criterion_9() {
  const auto root = fs::temp_directory_path() / "uimer_acceptance_repro";
  fs::remove_all(root);
  bool identical = true;
  std::string detail;
  for (const auto& [name, seed] : {std::pair{"ic_im", 55ULL}, std::pair{"sf_dm", 42ULL}}) {
    std::string first;
    for (int attempt = 0; attempt < 2; ++attempt) {
      auto c = load_experiment_config(kSource / "configs" / (std::string(name) + ".json"));
      c.n_shot = 3;
      c.schedule.seeds = {seed};
      c.output_dir = root / ("attempt" + std::to_string(attempt)) / name;
      run_experiment(c);
      const auto log = read(c.output_dir / ("seed_" + std::to_string(seed)) / "run_log.jsonl");
      if (attempt == 0) first = log;
      else identical = identical && !log.empty() && log == first;
    }
  }
  detail += std::string("run logs ") + (identical ? "byte-identical" : "DIFFER") + " on rerun (ic_im/55, sf_dm/42); ";

  // four seeded base runs, then recompute the report from the raw files
  auto c = load_experiment_config(kSource / "configs/ic_base.json");
  c.n_shot = 3;
  c.output_dir = root / "report" / "ic_base";
  run_experiment(c);
  std::vector<fs::path> logs;
  std::vector<double> values;
  for (auto seed : c.schedule.seeds) {
    const auto path = c.output_dir / ("seed_" + std::to_string(seed)) / "run_log.jsonl";
    logs.push_back(path);
    std::istringstream ss(read(path));
    std::string line, last;
    while (std::getline(ss, line)) {
      if (!line.empty()) last = line;
    }
    values.push_back(nlohmann::json::parse(last).at("test_metric").get<double>());
  }
  double mean = 0.0;
  for (double v : values) mean += v / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  const auto rows = report_from_logs(logs);
  const bool match = rows.size() == 1 && std::abs(rows[0].mean - mean) <= 1e-12 && std::abs(rows[0].std - std) <= 1e-12;
  detail += "report mean/std " + (rows.empty() ? std::string("missing") : fmt(rows[0].mean) + "/" + fmt(rows[0].std)) +
            " vs recomputed " + fmt(mean) + "/" + fmt(std) + (match ? " (match)" : " (MISMATCH)");
  fs::remove_all(root);
  return {identical && match, detail};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int n, const std::function<Outcome()>& run) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  };
  report(1, criterion_1);
  report(2, criterion_2);
  report(3, criterion_3);
  Trained trained;
  std::string training_error;
  try {
    trained = train_all();
  } catch (const std::exception& e) {
    training_error = e.what();
  }
  auto needs_training = [&](const std::function<Outcome(const Trained&)>& f) {
    return [&, f]() -> Outcome {
      if (!training_error.empty()) return {false, "training failed: " + training_error};
      return f(trained);
    };
  };
  report(4, needs_training(criterion_4));
  report(5, needs_training(criterion_5));
  report(6, needs_training(criterion_6));
  report(7, criterion_7);
  report(8, needs_training(criterion_8));
  report(9, criterion_9);
  std::cout << (9 - failed) << "/9 criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
