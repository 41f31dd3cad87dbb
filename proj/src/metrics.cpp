#include "uimer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "uimer/errors.hpp"

namespace uimer {
namespace {

void check_aligned(std::size_t a, std::size_t b) {
  if (a != b) throw ValidationError("predictions and golds differ in length");
}

const std::vector<std::string>& tags_of(const Output& o) {
  const auto* t = std::get_if<std::vector<std::string>>(&o);
  if (!t) throw ValidationError("span scoring needs tag sequences");
  return *t;
}

}  // namespace

std::vector<TagSpan> extract_spans(std::span<const std::string> tags) {
  std::vector<TagSpan> spans;
  std::size_t i = 0;
  while (i < tags.size()) {
    if (tags[i] == kNullTag) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < tags.size() && tags[j] == tags[i]) ++j;
    spans.push_back({i, j, tags[i]});
    i = j;
  }
  return spans;
}

SpanScores span_scores(std::span<const Output> predictions, std::span<const Output> golds) {
  check_aligned(predictions.size(), golds.size());
  std::size_t n_pred = 0, n_gold = 0, hit = 0;
  for (std::size_t k = 0; k < golds.size(); ++k) {
    const auto& p = tags_of(predictions[k]);
    const auto& g = tags_of(golds[k]);
    check_aligned(p.size(), g.size());
    const auto ps = extract_spans(p);
    const auto gs = extract_spans(g);
    const std::set<TagSpan> gold_set(gs.begin(), gs.end());
    n_pred += ps.size();
    n_gold += gs.size();
    for (const auto& s : ps) hit += gold_set.count(s);
  }
  SpanScores out;
  out.precision = n_pred ? static_cast<double>(hit) / static_cast<double>(n_pred) : 0.0;
  out.recall = n_gold ? static_cast<double>(hit) / static_cast<double>(n_gold) : 0.0;
  const double denom = out.precision + out.recall;
  out.f1 = denom > 0.0 ? 2.0 * out.precision * out.recall / denom : 0.0;
  return out;
}

double accuracy(std::span<const Output> predictions, std::span<const Output> golds) {
  check_aligned(predictions.size(), golds.size());
  if (golds.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t k = 0; k < golds.size(); ++k) hit += predictions[k] == golds[k] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(golds.size());
}

double metric(TaskKind kind, std::span<const Output> predictions, std::span<const Output> golds) {
  if (kind == TaskKind::kSequenceLabeling) return span_scores(predictions, golds).f1;
  return accuracy(predictions, golds);
}

std::vector<Output> predict_all(const TaskModel& model, const Corpus& corpus) {
  std::vector<Output> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus.examples) out.push_back(predict(model, ex));
  return out;
}

double evaluate(const TaskModel& model, const Corpus& corpus) {
  const auto preds = predict_all(model, corpus);
  std::vector<Output> golds;
  golds.reserve(corpus.size());
  for (const auto& ex : corpus.examples) golds.push_back(ex.output);
  return metric(model.kind(), preds, golds);
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() < 2) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return out;
}

}  // namespace uimer
