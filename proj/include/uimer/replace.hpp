#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uimer/corpus.hpp"
#include "uimer/mlm.hpp"

namespace uimer {

enum class StrategyKind { kMask, kBert, kPrior, kUniform };

std::string to_string(StrategyKind kind);
StrategyKind strategy_kind_from_string(const std::string& name);

struct ReplacementStrategy {
  StrategyKind kind = StrategyKind::kMask;
  const ConditionalTokenModel* mlm = nullptr;  // not owned; BERT kind only
  int top_k = 8;
  // Candidate pool for Uniform and Prior, with Prior's count(u)/N.
  std::vector<std::string> tokens;
  std::vector<double> prior;

  static ReplacementStrategy mask();
  static ReplacementStrategy bert(const ConditionalTokenModel& mlm, int top_k);
  static ReplacementStrategy prior_from(const Corpus& corpus);
  static ReplacementStrategy uniform(std::vector<std::string> vocabulary);
  // Throws ConfigError when required pieces are missing.
  void validate() const;
};

struct Variant {
  std::vector<std::string> tokens;
  double weight = 0.0;
  std::vector<std::size_t> positions;  // sorted
};

enum class SetOrigin { kSingle, kRationaleSet, kNonRationaleSet };
enum class ReplaceWhich { kRationales, kNonRationales };

struct ReplacementSampleSet {
  std::vector<Variant> variants;
  SetOrigin origin = SetOrigin::kSingle;
  std::optional<std::size_t> position;  // for kSingle

  double total_weight() const;
};

ReplacementSampleSet build_single(const ReplacementStrategy& strategy, std::span<const std::string> tokens,
                                  std::size_t position, int set_size, std::uint64_t seed);

// Rationale or equally sized random non-rationale replacement. The
// non-rationale subset is drawn afresh for every variant unless
// `redraw_per_variant` is false.
ReplacementSampleSet build_multi(const ReplacementStrategy& strategy, const AnnotatedExample& example,
                                 ReplaceWhich which, int set_size, std::uint64_t seed,
                                 bool redraw_per_variant = true);

}  // namespace uimer
