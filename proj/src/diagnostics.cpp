#include "uimer/diagnostics.hpp"

#include "uimer/errors.hpp"

namespace uimer {

Diagnostics diagnose_records(std::span<const DiagnosticRecord> records, int excluded) {
  Diagnostics d;
  d.excluded = excluded;
  int hit_gt = 0, hit_le = 0;
  for (const auto& r : records) {
    if (r.a_r > r.a_n) {
      ++d.n_gt;
      hit_gt += r.correct ? 1 : 0;
    } else {
      ++d.n_le;
      hit_le += r.correct ? 1 : 0;
    }
  }
  const int n = d.n_gt + d.n_le;
  if (n == 0) return d;
  d.acc_when_ar_gt_an = d.n_gt ? static_cast<double>(hit_gt) / d.n_gt : 0.0;
  d.acc_when_ar_le_an = d.n_le ? static_cast<double>(hit_le) / d.n_le : 0.0;
  d.fraction_ar_gt_an = static_cast<double>(d.n_gt) / n;
  d.overall = static_cast<double>(hit_gt + hit_le) / n;
  return d;
}

std::optional<std::pair<double, double>> masked_means(std::span<const double> scores, std::span<const int> mask) {
  if (scores.size() != mask.size()) throw ValidationError("scores and mask differ in length");
  double sr = 0.0, sn = 0.0;
  int nr = 0, nn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (mask[i]) {
      sr += scores[i];
      ++nr;
    } else {
      sn += scores[i];
      ++nn;
    }
  }
  if (nr == 0 || nn == 0) return std::nullopt;
  return std::pair{sr / nr, sn / nn};
}

Diagnostics diagnose(const TaskModel& model, const PairScorer& scorer, const Corpus& test) {
  std::vector<DiagnosticRecord> records;
  int excluded = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& ex = test.examples[i];
    std::optional<std::pair<double, double>> a;
    try {
      a = scorer(ex, i);
    } catch (const DegenerateInputError&) {
      a.reset();
    }
    if (!a) {
      ++excluded;
      continue;
    }
    records.push_back({a->first, a->second, predict(model, ex) == ex.output});
  }
  return diagnose_records(records, excluded);
}

}  // namespace uimer
