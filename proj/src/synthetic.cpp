#include "uimer/synthetic.hpp"

#include <filesystem>

#include "uimer/errors.hpp"
#include "uimer/random.hpp"

namespace uimer {
namespace {

const std::vector<std::pair<std::string, std::vector<std::string>>> kIntents = {
    {"PlayMusic", {"play", "listen"}},
    {"AddToPlaylist", {"add", "append"}},
    {"BookRestaurant", {"book", "reserve"}},
    {"GetWeather", {"weather", "forecast"}},
    {"RateBook", {"rate", "score"}},
};

const std::vector<std::string> kDistractors = {
    "the",    "a",      "my",     "some",   "blue",    "red",    "old",    "new",    "song",    "album",
    "table",  "city",   "today",  "please", "quickly", "jazz",   "rock",   "novel",  "chair",   "window",
    "river",  "garden", "friday", "sunny",  "green",   "small",  "large",  "happy",  "quiet",   "night",
    "morning", "paper", "coffee", "movie",  "train",   "street", "summer", "family", "evening", "dinner",
};

const std::vector<std::pair<std::string, std::string>> kTriggers = {
    {"from", "fromloc"},
    {"to", "toloc"},
    {"via", "stoploc"},
    {"near", "nearloc"},
};

const std::vector<std::string> kCities = {"boston", "denver", "paris", "tokyo", "madrid",
                                          "oslo",   "cairo",  "lima",  "rome",  "seoul"};

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.below(v.size())];
}

std::vector<std::string> distractors(const SyntheticOptions& o, Rng& rng) {
  const auto span = static_cast<std::uint64_t>(o.max_distractors - o.min_distractors + 1);
  const auto n = o.min_distractors + static_cast<int>(rng.below(span));
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back(pick(kDistractors, rng));
  return out;
}

// Inserts `unit` at a random gap of `tokens`.
template <typename T>
void insert_unit(std::vector<T>& tokens, std::vector<T> unit, Rng& rng) {
  const auto at = rng.below(tokens.size() + 1);
  tokens.insert(tokens.begin() + static_cast<long>(at), unit.begin(), unit.end());
}

AnnotatedExample classification_example(const SyntheticOptions& o, std::size_t label, Rng& rng) {
  auto tokens = distractors(o, rng);
  const auto& keywords = kIntents[label].second;
  const int planted = 1 + static_cast<int>(rng.below(2));
  for (int k = 0; k < planted; ++k) insert_unit(tokens, {pick(keywords, rng)}, rng);
  AnnotatedExample ex;
  ex.tokens = std::move(tokens);
  ex.output = kIntents[label].first;
  ex.rationale_mask.assign(ex.tokens.size(), 0);
  return ex;
}

AnnotatedExample labeling_example(const SyntheticOptions& o, std::size_t focus, Rng& rng) {
  // Units are inserted whole so a trigger always precedes its city.
  using Unit = std::vector<std::pair<std::string, std::string>>;
  std::vector<Unit> units;
  for (auto& w : distractors(o, rng)) units.push_back({{std::move(w), std::string(kNullTag)}});
  std::vector<std::size_t> slots{focus};
  if (rng.below(2) == 1) slots.push_back(rng.below(kTriggers.size()));
  for (auto s : slots) {
    const auto& [trigger, tag] = kTriggers[s];
    insert_unit(units, {Unit{{trigger, std::string(kNullTag)}, {pick(kCities, rng), tag}}}, rng);
  }
  // A bare city carries no slot; only a trigger makes it one.
  if (rng.uniform() < 0.3) insert_unit(units, {Unit{{pick(kCities, rng), std::string(kNullTag)}}}, rng);
  AnnotatedExample ex;
  std::vector<std::string> tags;
  for (const auto& unit : units) {
    for (const auto& [w, t] : unit) {
      ex.tokens.push_back(w);
      tags.push_back(t);
    }
  }
  ex.output = std::move(tags);
  ex.rationale_mask.assign(ex.tokens.size(), 0);
  return ex;
}

Corpus build_split(int per_label, std::size_t labels, const RationaleSource& source, Rng& rng,
                   const std::function<AnnotatedExample(std::size_t, Rng&)>& make) {
  std::vector<AnnotatedExample> out;
  for (int i = 0; i < per_label; ++i) {
    for (std::size_t l = 0; l < labels; ++l) out.push_back(annotate(make(l, rng), source));
  }
  return Corpus::from_examples(std::move(out));
}

void check(const SyntheticOptions& o) {
  if (o.pool_per_label < 1 || o.dev_per_label < 1 || o.test_per_label < 1) {
    throw ConfigError("synthetic split sizes must be positive");
  }
  if (o.min_distractors < 1 || o.max_distractors < o.min_distractors) {
    throw ConfigError("synthetic distractor range is invalid");
  }
}

}  // namespace

SyntheticBenchmark make_classification_benchmark(const SyntheticOptions& options, std::uint64_t seed) {
  check(options);
  SyntheticBenchmark b;
  b.kind = TaskKind::kSingleClassification;
  std::map<std::string, std::set<std::string>> map;
  for (const auto& [label, words] : kIntents) {
    map[label] = {words.begin(), words.end()};
    b.labels.push_back(label);
    for (const auto& w : words) b.vocabulary.push_back(w);
  }
  b.vocabulary.insert(b.vocabulary.end(), kDistractors.begin(), kDistractors.end());
  b.source = RationaleSource::keywords(std::move(map));
  auto make = [&](std::size_t l, Rng& rng) { return classification_example(options, l, rng); };
  Rng pool_rng(derive_seed(seed, 1)), dev_rng(derive_seed(seed, 2)), test_rng(derive_seed(seed, 3));
  b.pool = build_split(options.pool_per_label, kIntents.size(), b.source, pool_rng, make);
  b.dev = build_split(options.dev_per_label, kIntents.size(), b.source, dev_rng, make);
  b.test = build_split(options.test_per_label, kIntents.size(), b.source, test_rng, make);
  return b;
}

SyntheticBenchmark make_labeling_benchmark(const SyntheticOptions& options, std::uint64_t seed) {
  check(options);
  SyntheticBenchmark b;
  b.kind = TaskKind::kSequenceLabeling;
  std::string cities;
  for (const auto& c : kCities) cities += (cities.empty() ? "" : "|") + c;
  std::vector<std::string> patterns;
  for (const auto& [trigger, tag] : kTriggers) {
    patterns.push_back("(?P<rationale_" + tag + ">" + trigger + ") (?:" + cities + ")");
  }
  b.source = RationaleSource::regexes(patterns, PatternPolicy::kUnion);
  b.labels.push_back(std::string(kNullTag));
  for (const auto& [trigger, tag] : kTriggers) {
    b.labels.push_back(tag);
    b.vocabulary.push_back(trigger);
  }
  b.vocabulary.insert(b.vocabulary.end(), kCities.begin(), kCities.end());
  b.vocabulary.insert(b.vocabulary.end(), kDistractors.begin(), kDistractors.end());
  auto make = [&](std::size_t l, Rng& rng) { return labeling_example(options, l, rng); };
  Rng pool_rng(derive_seed(seed, 1)), dev_rng(derive_seed(seed, 2)), test_rng(derive_seed(seed, 3));
  b.pool = build_split(options.pool_per_label, kTriggers.size(), b.source, pool_rng, make);
  b.dev = build_split(options.dev_per_label, kTriggers.size(), b.source, dev_rng, make);
  b.test = build_split(options.test_per_label, kTriggers.size(), b.source, test_rng, make);
  return b;
}

void write_benchmark(const SyntheticBenchmark& bench, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_corpus(bench.pool, dir / "pool.jsonl");
  save_corpus(bench.dev, dir / "dev.jsonl");
  save_corpus(bench.test, dir / "test.jsonl");
  save_rationale_source(bench.source, dir / "rationales.json");
}

}  // namespace uimer
