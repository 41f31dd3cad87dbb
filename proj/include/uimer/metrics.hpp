#pragma once

#include <span>
#include <string>
#include <vector>

#include "uimer/corpus.hpp"
#include "uimer/taskmodel.hpp"

namespace uimer {

struct TagSpan {
  std::size_t begin = 0;  // inclusive
  std::size_t end = 0;    // exclusive
  std::string label;
  friend bool operator==(const TagSpan&, const TagSpan&) = default;
  friend auto operator<=>(const TagSpan&, const TagSpan&) = default;
};

// Maximal runs of one identical non-null tag.
std::vector<TagSpan> extract_spans(std::span<const std::string> tags);

struct SpanScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Exact-boundary, exact-label micro scores over all sentences.
SpanScores span_scores(std::span<const Output> predictions, std::span<const Output> golds);
double accuracy(std::span<const Output> predictions, std::span<const Output> golds);
// Accuracy for classification and pair tasks, span F1 for labeling.
double metric(TaskKind kind, std::span<const Output> predictions, std::span<const Output> golds);

std::vector<Output> predict_all(const TaskModel& model, const Corpus& corpus);
double evaluate(const TaskModel& model, const Corpus& corpus);

// Mean and unbiased standard deviation (0 for fewer than two values).
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
MeanStd mean_std(std::span<const double> values);

}  // namespace uimer
