#pragma once

#include <functional>
#include <optional>
#include <span>
#include <utility>

#include "uimer/corpus.hpp"
#include "uimer/taskmodel.hpp"

namespace uimer {

// Accuracy split by whether rationales outscore non-rationales. Ties count
// as "not higher".
struct Diagnostics {
  double acc_when_ar_gt_an = 0.0;
  double acc_when_ar_le_an = 0.0;
  double fraction_ar_gt_an = 0.0;
  double overall = 0.0;
  int n_gt = 0;
  int n_le = 0;
  int excluded = 0;
};

struct DiagnosticRecord {
  double a_r = 0.0;
  double a_n = 0.0;
  bool correct = false;
};

Diagnostics diagnose_records(std::span<const DiagnosticRecord> records, int excluded = 0);

// Mean score over rationale and over non-rationale tokens; nullopt unless
// both classes are present.
std::optional<std::pair<double, double>> masked_means(std::span<const double> scores, std::span<const int> mask);

// (a_R, a_N) for one example, or nullopt to exclude it.
using PairScorer = std::function<std::optional<std::pair<double, double>>(const AnnotatedExample&, std::size_t)>;

Diagnostics diagnose(const TaskModel& model, const PairScorer& scorer, const Corpus& test);

}  // namespace uimer
