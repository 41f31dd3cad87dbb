#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "uimer/corpus.hpp"
#include "uimer/errors.hpp"

using namespace uimer;

namespace {

const std::filesystem::path kSource = UIMER_SOURCE_DIR;

std::vector<std::string> marked(const AnnotatedExample& ex) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
    if (ex.rationale_mask[i]) out.push_back(ex.tokens[i]);
  }
  return out;
}

AnnotatedExample labeled(std::vector<std::string> tokens, std::string label) {
  AnnotatedExample ex;
  ex.rationale_mask.assign(tokens.size(), 0);
  ex.tokens = std::move(tokens);
  ex.output = std::move(label);
  return ex;
}

AnnotatedExample tagged(std::vector<std::string> tokens, std::vector<std::string> tags) {
  AnnotatedExample ex;
  ex.rationale_mask.assign(tokens.size(), 0);
  ex.tokens = std::move(tokens);
  ex.output = std::move(tags);
  return ex;
}

}  // namespace

TEST_CASE("tokenize splits punctuation but keeps hyphens and apostrophes") {
  CHECK(tokenize("Play top-rated songs, please!") ==
        std::vector<std::string>{"Play", "top-rated", "songs", ",", "please", "!"});
  CHECK(tokenize("  what's\tup ") == std::vector<std::string>{"what's", "up"});
  CHECK(tokenize("").empty());
}

TEST_CASE("shipped sources reproduce the reference rationale examples") {
  const auto sf = load_rationale_source(kSource / "data/snips_sf_patterns.json");
  CHECK(sf.patterns.size() == 28);
  const auto rated = annotate(tokenize("rate the current essay 2 out of 6"),
                              std::vector<std::string>(8, "O"), sf);
  CHECK(marked(rated) == std::vector<std::string>{"rate", "out", "of"});

  const auto ic = load_rationale_source(kSource / "data/snips_ic_keywords.json");
  const auto added = annotate(tokenize("add step to me to the 50 clásicos playlist"),
                              std::string("AddToPlaylist"), ic);
  CHECK(marked(added) == std::vector<std::string>{"add", "playlist"});
}

TEST_CASE("keyword annotation") {
  auto src = RationaleSource::keywords({{"A", {"Foo", "bar"}}, {"B", {}}});
  SUBCASE("case-insensitive whole-token match") {
    auto ex = annotate({"FOO", "foobar", "bar"}, std::string("A"), src);
    CHECK(ex.rationale_mask == std::vector<int>{1, 0, 1});
  }
  SUBCASE("empty keyword set gives an all-zero mask") {
    auto ex = annotate({"foo", "bar"}, std::string("B"), src);
    CHECK(ex.rationale_mask == std::vector<int>{0, 0});
  }
  SUBCASE("unknown label") {
    CHECK_THROWS_AS(annotate({"foo"}, std::string("C"), src), AnnotationError);
  }
  SUBCASE("coverage check names the missing label") {
    auto corpus = Corpus::from_examples({labeled({"x"}, "A"), labeled({"y"}, "Z")});
    CHECK_THROWS_WITH_AS(src.check_covers(corpus), doctest::Contains("Z"), ConfigError);
  }
}

TEST_CASE("regex sources") {
  SUBCASE("patterns without a rationale group are rejected") {
    const std::vector<std::string> p{".*(foo).*"};
    CHECK_THROWS_AS(RationaleSource::regexes(p), ConfigError);
  }
  SUBCASE("invalid syntax is rejected") {
    const std::vector<std::string> p{".*(?P<rationale>foo.*"};
    CHECK_THROWS_AS(RationaleSource::regexes(p), ConfigError);
  }
  SUBCASE("union marks tokens covered by any pattern") {
    const std::vector<std::string> p{".*(?P<rationale>alpha).*", ".*(?P<rationale>gamma) (?P<none>delta).*"};
    auto src = RationaleSource::regexes(p);
    auto ex = annotate({"alpha", "beta", "gamma", "delta"}, std::string("x"), src);
    CHECK(ex.rationale_mask == std::vector<int>{1, 0, 1, 0});
  }
  SUBCASE("first-match stops at the first contributing pattern") {
    const std::vector<std::string> p{".*(?P<rationale>alpha).*", ".*(?P<rationale>gamma).*"};
    auto src = RationaleSource::regexes(p, PatternPolicy::kFirstMatch);
    auto ex = annotate({"alpha", "beta", "gamma"}, std::string("x"), src);
    CHECK(ex.rationale_mask == std::vector<int>{1, 0, 0});
  }
  SUBCASE("groups never match inside a token") {
    const std::vector<std::string> p{".*(?P<rationale>in).*"};
    auto src = RationaleSource::regexes(p);
    CHECK(annotate({"berlin"}, std::string("x"), src).rationale_mask == std::vector<int>{0});
    CHECK(annotate({"berlin", "in"}, std::string("x"), src).rationale_mask == std::vector<int>{0, 1});
  }
  SUBCASE("a pattern marks every one of its matches") {
    const std::vector<std::string> p{"(?P<rationale>from) (?:oslo|rome)"};
    auto src = RationaleSource::regexes(p);
    auto ex = annotate({"from", "oslo", "then", "from", "rome"}, std::string("x"), src);
    CHECK(ex.rationale_mask == std::vector<int>{1, 0, 0, 1, 0});
  }
}

TEST_CASE("50-sentence pattern-family fixture") {
  const auto src = load_rationale_source(kSource / "data/snips_sf_patterns.json");
  std::ifstream in(kSource / "tests/data/sf_pattern_sentences.jsonl");
  REQUIRE(in);
  std::string line;
  std::map<std::string, int> per_family;
  int checked = 0;
  while (std::getline(in, line)) {
    const auto rec = nlohmann::json::parse(line);
    const auto tokens = rec.at("tokens").get<std::vector<std::string>>();
    const auto expected = rec.at("rationale_mask").get<std::vector<int>>();
    const auto ex = annotate(tokens, std::vector<std::string>(tokens.size(), "O"), src);
    INFO(line);
    CHECK(ex.rationale_mask == expected);
    ++per_family[rec.at("family").get<std::string>()];
    ++checked;
  }
  CHECK(checked == 50);
  for (const auto& [family, n] : per_family) CHECK(n >= 10);
}

TEST_CASE("annotation is idempotent") {
  const auto sf = load_rationale_source(kSource / "data/snips_sf_patterns.json");
  const auto ic = load_rationale_source(kSource / "data/snips_ic_keywords.json");
  auto once = annotate(tokenize("book a table for four people"), std::vector<std::string>(6, "O"), sf);
  CHECK(annotate(once, sf) == once);
  auto kw = annotate(tokenize("play some music"), std::string("PlayMusic"), ic);
  CHECK(annotate(kw, ic) == kw);
  CHECK(annotate(kw, RationaleSource::provided()) == kw);
}

TEST_CASE("provided masks pass through and are validated") {
  auto ex = labeled({"a", "b"}, "x");
  ex.rationale_mask = {0, 1};
  CHECK(annotate(ex, RationaleSource::provided()).rationale_mask == std::vector<int>{0, 1});
  ex.rationale_mask = {1};
  CHECK_THROWS_AS(annotate(ex, RationaleSource::provided()), ValidationError);
}

TEST_CASE("corpus bookkeeping") {
  auto corpus = Corpus::from_examples({labeled({"the", "cat"}, "a"), labeled({"the", "dog", "the"}, "b")});
  CHECK(corpus.corpus_size == 5);
  CHECK(corpus.token_counts.at("the") == 3);
  CHECK(corpus.vocabulary.size() == 3);
  std::int64_t total = 0;
  for (const auto& [_, c] : corpus.token_counts) total += c;
  CHECK(total == corpus.corpus_size);
}

TEST_CASE("n-shot classification sampling") {
  std::vector<AnnotatedExample> examples;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 10; ++i) examples.push_back(labeled({"w" + std::to_string(i)}, "c" + std::to_string(c)));
  }
  const auto corpus = Corpus::from_examples(examples);
  const auto one = sample_n_shot(corpus, 1, 5);
  CHECK(one.size() == 3);
  CHECK(one.labels() == std::vector<std::string>{"c0", "c1", "c2"});
  CHECK(sample_n_shot(corpus, 1, 5) == one);
  const auto three = sample_n_shot(corpus, 3, 9);
  std::map<std::string, int> counts;
  for (const auto& ex : three.examples) ++counts[ex.label()];
  for (const auto& [_, n] : counts) CHECK(n == 3);
  CHECK_THROWS_AS(sample_n_shot(corpus, 11, 0), SamplingError);
  CHECK_THROWS_AS(sample_n_shot(corpus, 0, 0), ValidationError);
}

TEST_CASE("n-shot labeling sampling covers every slot label") {
  std::vector<AnnotatedExample> examples;
  for (int i = 0; i < 12; ++i) {
    examples.push_back(tagged({"a", "b", "c"}, {"X", i % 3 == 0 ? "Y" : "O", "O"}));
  }
  examples.push_back(tagged({"r", "s"}, {"RARE", "O"}));
  const auto corpus = Corpus::from_examples(examples);
  const auto sampled = sample_n_shot(corpus, 1, 3);
  std::map<std::string, int> have;
  for (const auto& ex : sampled.examples) {
    for (const auto& [l, c] : count_slot_spans(ex.tags())) have[l] += c;
  }
  CHECK(have["RARE"] >= 1);
  CHECK(have["X"] >= 1);
  CHECK(have["Y"] >= 1);
  CHECK(sampled.size() <= 2);
  try {
    (void)sample_n_shot(corpus, 2, 3);
    FAIL("expected SamplingError");
  } catch (const SamplingError& e) {
    CHECK(e.label() == "RARE");
  }
}

TEST_CASE("slot spans come from runs of identical non-null tags") {
  const std::vector<std::string> tags{"A", "A", "O", "A", "B", "B"};
  const auto spans = count_slot_spans(tags);
  CHECK(spans.at("A") == 2);
  CHECK(spans.at("B") == 1);
}

TEST_CASE("corpus persistence") {
  auto ex = tagged({"x", "y"}, {"O", "S"});
  ex.rationale_mask = {1, 0};
  auto pair = labeled({"p", "q", "r"}, "entail");
  pair.pair_boundary = 1;
  const auto corpus = Corpus::from_examples({ex, pair});
  const auto path = std::filesystem::temp_directory_path() / "uimer_corpus_roundtrip.jsonl";
  save_corpus(corpus, path);
  const auto loaded = load_corpus(path);
  CHECK(loaded == corpus);
  CHECK(loaded.vocabulary == corpus.vocabulary);
  std::filesystem::remove(path);

  CHECK(parse_corpus("").empty());
  CHECK(parse_corpus("").vocabulary.size() == 0);
  try {
    (void)parse_corpus("{\"tokens\":[\"a\"],\"output\":\"x\"}\n{\"tokens\":[\"a\",\"b\"],\"output\":\"x\",\"rationale_mask\":[1]}\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse_corpus("{not json"), ParseError);
}
