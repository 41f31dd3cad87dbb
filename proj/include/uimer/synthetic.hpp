#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uimer/corpus.hpp"
#include "uimer/taskmodel.hpp"

namespace uimer {

// Planted-rationale benchmarks. Classification: the label is decided by 1-2
// class keywords placed among distractors. Labeling: a slot value's tag is
// decided by the trigger word in front of it, and values are shared across
// tags.
struct SyntheticOptions {
  int pool_per_label = 40;
  int dev_per_label = 10;
  int test_per_label = 60;
  int min_distractors = 4;
  int max_distractors = 7;
};

struct SyntheticBenchmark {
  TaskKind kind = TaskKind::kSingleClassification;
  Corpus pool;  // n-shot training sets are drawn from here
  Corpus dev;
  Corpus test;
  RationaleSource source;
  std::vector<std::string> vocabulary;  // every token any split can contain
  std::vector<std::string> labels;
};

SyntheticBenchmark make_classification_benchmark(const SyntheticOptions& options, std::uint64_t seed);
SyntheticBenchmark make_labeling_benchmark(const SyntheticOptions& options, std::uint64_t seed);

// Writes pool/dev/test JSONL files and the rationale source to `dir`.
void write_benchmark(const SyntheticBenchmark& bench, const std::filesystem::path& dir);

}  // namespace uimer
