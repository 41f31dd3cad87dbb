#include <doctest.h>

#include <cmath>

#include "uimer/diagnostics.hpp"
#include "uimer/errors.hpp"
#include "uimer/metrics.hpp"
#include "uimer/random.hpp"

using namespace uimer;

namespace {

Output tags(std::vector<std::string> t) { return Output(std::move(t)); }

}  // namespace

TEST_CASE("accuracy") {
  const std::vector<Output> gold{std::string("a"), std::string("b"), std::string("a")};
  CHECK(accuracy(gold, gold) == 1.0);
  const std::vector<Output> pred{std::string("a"), std::string("a"), std::string("b")};
  CHECK(accuracy(pred, gold) == doctest::Approx(1.0 / 3.0));
  CHECK(metric(TaskKind::kSingleClassification, gold, gold) == 1.0);
  CHECK(metric(TaskKind::kPairClassification, pred, gold) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("spans come from runs of one non-null tag") {
  const std::vector<std::string> t{"O", "to", "to", "from", "O", "to"};
  const auto spans = extract_spans(t);
  REQUIRE(spans.size() == 3);
  CHECK(spans[0] == TagSpan{1, 3, "to"});
  CHECK(spans[1] == TagSpan{3, 4, "from"});
  CHECK(spans[2] == TagSpan{5, 6, "to"});
}

TEST_CASE("span F1") {
  SUBCASE("all correct") {
    const std::vector<Output> gold{tags({"O", "x", "x"}), tags({"y", "O"})};
    CHECK(metric(TaskKind::kSequenceLabeling, gold, gold) == 1.0);
  }
  SUBCASE("no predicted spans") {
    const std::vector<Output> gold{tags({"O", "x"})};
    const std::vector<Output> pred{tags({"O", "O"})};
    const auto s = span_scores(pred, gold);
    CHECK(s.recall == 0.0);
    CHECK(s.f1 == 0.0);
  }
  SUBCASE("two gold spans, one matched prediction") {
    // gold: [1,2) x and [3,5) y; predicted: only [1,2) x
    const std::vector<Output> gold{tags({"O", "x", "O", "y", "y"})};
    const std::vector<Output> pred{tags({"O", "x", "O", "O", "O"})};
    const auto s = span_scores(pred, gold);
    CHECK(s.precision == 1.0);
    CHECK(s.recall == 0.5);
    CHECK(s.f1 == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("boundaries must match exactly") {
    const std::vector<Output> gold{tags({"x", "x", "O"})};
    const std::vector<Output> pred{tags({"x", "O", "O"})};
    CHECK(span_scores(pred, gold).f1 == 0.0);
  }
  SUBCASE("labels must match exactly") {
    const std::vector<Output> gold{tags({"x", "O"})};
    const std::vector<Output> pred{tags({"y", "O"})};
    CHECK(span_scores(pred, gold).f1 == 0.0);
  }
}

TEST_CASE("metric length mismatches") {
  const std::vector<Output> one{std::string("a")};
  const std::vector<Output> two{std::string("a"), std::string("b")};
  CHECK_THROWS_AS(accuracy(one, two), ValidationError);
  const std::vector<Output> short_tags{tags({"O"})};
  const std::vector<Output> long_tags{tags({"O", "x"})};
  CHECK_THROWS_AS(span_scores(short_tags, long_tags), ValidationError);
}

TEST_CASE("mean and unbiased std") {
  const std::vector<double> v{0.2, 0.4, 0.9};
  const auto ms = mean_std(v);
  CHECK(ms.mean == doctest::Approx(0.5));
  // sum of squared deviations 0.09 + 0.01 + 0.16 = 0.26, over n - 1
  CHECK(ms.std == doctest::Approx(std::sqrt(0.13)));
  const std::vector<double> single{0.7};
  CHECK(mean_std(single).std == 0.0);
}

TEST_CASE("diagnostics partition") {
  SUBCASE("constant scores fall in the not-higher bucket") {
    std::vector<DiagnosticRecord> rows{{1.0, 1.0, true}, {1.0, 1.0, false}, {1.0, 1.0, true}};
    const auto d = diagnose_records(rows);
    CHECK(d.fraction_ar_gt_an == 0.0);
    CHECK(d.acc_when_ar_le_an == d.overall);
    CHECK(d.n_le == 3);
  }
  SUBCASE("hand fixture") {
    std::vector<DiagnosticRecord> rows{{2, 1, true}, {3, 0, true}, {0, 1, false}, {0, 2, true}};
    const auto d = diagnose_records(rows, 5);
    CHECK(d.fraction_ar_gt_an == 0.5);
    CHECK(d.acc_when_ar_gt_an == 1.0);
    CHECK(d.acc_when_ar_le_an == 0.5);
    CHECK(d.overall == 0.75);
    CHECK(d.excluded == 5);
  }
  SUBCASE("decomposition identity on random records") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<DiagnosticRecord> rows;
      const auto n = 1 + rng.below(40);
      for (std::uint64_t i = 0; i < n; ++i) {
        rows.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform() < 0.6});
      }
      const auto d = diagnose_records(rows);
      CHECK(std::abs(d.overall - (d.fraction_ar_gt_an * d.acc_when_ar_gt_an +
                                  (1 - d.fraction_ar_gt_an) * d.acc_when_ar_le_an)) <= 1e-9);
      CHECK(d.fraction_ar_gt_an >= 0.0);
      CHECK(d.fraction_ar_gt_an <= 1.0);
    }
  }
}

TEST_CASE("masked means") {
  const std::vector<double> s{1, 2, 3, 4};
  const std::vector<int> m{1, 0, 1, 0};
  const auto p = masked_means(s, m);
  REQUIRE(p);
  CHECK(p->first == 2.0);
  CHECK(p->second == 3.0);
  const std::vector<int> all{1, 1, 1, 1};
  CHECK_FALSE(masked_means(s, all));
}
