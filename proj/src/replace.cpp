#include "uimer/replace.hpp"

#include <algorithm>
#include <map>

#include "uimer/errors.hpp"
#include "uimer/random.hpp"
#include "uimer/taskmodel.hpp"

namespace uimer {
namespace {

struct Draw {
  std::string token;
  double q = 0.0;
};

// Draws a filler different from the original token. q stays the
// distribution's probability of the drawn token.
Draw draw_random(const ReplacementStrategy& s, const std::string& original, Rng& rng) {
  const std::size_t n = s.tokens.size();
  const bool only_original = std::all_of(s.tokens.begin(), s.tokens.end(),
                                         [&](const std::string& t) { return t == original; });
  if (n == 0 || only_original) throw DegenerateInputError("no replacement candidate differs from '" + original + "'");
  for (;;) {
    std::size_t k;
    if (s.kind == StrategyKind::kUniform) {
      k = rng.below(n);
    } else {
      const double u = rng.uniform();
      double acc = 0.0;
      k = n - 1;
      for (std::size_t j = 0; j < n; ++j) {
        acc += s.prior[j];
        if (u < acc) {
          k = j;
          break;
        }
      }
    }
    if (s.tokens[k] == original) continue;
    const double q = s.kind == StrategyKind::kUniform ? 1.0 / static_cast<double>(n) : s.prior[k];
    return {s.tokens[k], q};
  }
}

// Fillers for the BERT kind ranked by mlm probability, original excluded.
std::vector<FillCandidate> bert_candidates(const ReplacementStrategy& s, std::span<const std::string> tokens,
                                           std::size_t position) {
  auto all = s.mlm->fill(tokens, position);
  std::erase_if(all, [&](const FillCandidate& c) { return c.token == tokens[position]; });
  if (all.empty()) throw DegenerateInputError("mlm offers no filler at position " + std::to_string(position));
  if (all.size() > static_cast<std::size_t>(s.top_k)) all.resize(static_cast<std::size_t>(s.top_k));
  return all;
}

void collapse_duplicates(ReplacementSampleSet& set) {
  std::map<std::vector<std::string>, std::size_t> seen;
  std::vector<Variant> out;
  for (auto& v : set.variants) {
    auto [it, inserted] = seen.emplace(v.tokens, out.size());
    if (inserted) {
      out.push_back(std::move(v));
    } else {
      out[it->second].weight += v.weight;
    }
  }
  set.variants = std::move(out);
}

// Fills `positions` of `tokens`; BERT uses rank `rank` at every position.
Variant make_variant(const ReplacementStrategy& s, std::span<const std::string> tokens,
                     std::vector<std::size_t> positions, Rng& rng, std::size_t rank,
                     const std::vector<std::vector<FillCandidate>>* ranked) {
  Variant v;
  v.tokens.assign(tokens.begin(), tokens.end());
  std::sort(positions.begin(), positions.end());
  double q_sum = 0.0;
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const auto pos = positions[k];
    switch (s.kind) {
      case StrategyKind::kMask:
        v.tokens[pos] = std::string(kMaskToken);
        q_sum += 1.0;
        break;
      case StrategyKind::kBert: {
        const auto& cands = (*ranked)[k];
        const auto& c = cands[std::min(rank, cands.size() - 1)];
        v.tokens[pos] = c.token;
        q_sum += c.probability;
        break;
      }
      case StrategyKind::kPrior:
      case StrategyKind::kUniform: {
        const auto d = draw_random(s, tokens[pos], rng);
        v.tokens[pos] = d.token;
        q_sum += d.q;
        break;
      }
    }
  }
  v.weight = q_sum / static_cast<double>(positions.size());
  v.positions = std::move(positions);
  return v;
}

std::size_t variant_count(const ReplacementStrategy& s, int set_size,
                          const std::vector<std::vector<FillCandidate>>& ranked) {
  switch (s.kind) {
    case StrategyKind::kMask:
      return 1;
    case StrategyKind::kBert: {
      std::size_t widest = 0;
      for (const auto& c : ranked) widest = std::max(widest, c.size());
      return widest;
    }
    default:
      return static_cast<std::size_t>(set_size);
  }
}

}  // namespace

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kMask: return "mask";
    case StrategyKind::kBert: return "bert";
    case StrategyKind::kPrior: return "prior";
    case StrategyKind::kUniform: return "uniform";
  }
  return "?";
}

StrategyKind strategy_kind_from_string(const std::string& name) {
  const auto n = to_lower(name);
  if (n == "mask") return StrategyKind::kMask;
  if (n == "bert") return StrategyKind::kBert;
  if (n == "prior") return StrategyKind::kPrior;
  if (n == "uniform") return StrategyKind::kUniform;
  throw ConfigError("unknown replacement strategy '" + name + "'");
}

ReplacementStrategy ReplacementStrategy::mask() { return {}; }

ReplacementStrategy ReplacementStrategy::bert(const ConditionalTokenModel& mlm, int top_k) {
  ReplacementStrategy s;
  s.kind = StrategyKind::kBert;
  s.mlm = &mlm;
  s.top_k = top_k;
  return s;
}

ReplacementStrategy ReplacementStrategy::prior_from(const Corpus& corpus) {
  ReplacementStrategy s;
  s.kind = StrategyKind::kPrior;
  if (corpus.corpus_size == 0) throw ConfigError("prior strategy needs a non-empty corpus");
  for (const auto& tok : corpus.vocabulary.tokens()) {
    auto it = corpus.token_counts.find(tok);
    if (it == corpus.token_counts.end() || it->second == 0) continue;
    s.tokens.push_back(tok);
    s.prior.push_back(static_cast<double>(it->second) / static_cast<double>(corpus.corpus_size));
  }
  return s;
}

ReplacementStrategy ReplacementStrategy::uniform(std::vector<std::string> vocabulary) {
  ReplacementStrategy s;
  s.kind = StrategyKind::kUniform;
  s.tokens = std::move(vocabulary);
  return s;
}

void ReplacementStrategy::validate() const {
  switch (kind) {
    case StrategyKind::kMask:
      return;
    case StrategyKind::kBert:
      if (mlm == nullptr) throw ConfigError("bert replacement requires a conditional token model");
      if (top_k < 1) throw ConfigError("bert_top_k must be >= 1");
      return;
    case StrategyKind::kPrior:
      if (tokens.empty() || prior.size() != tokens.size()) throw ConfigError("prior strategy has no token counts");
      return;
    case StrategyKind::kUniform:
      if (tokens.empty()) throw ConfigError("uniform strategy has an empty vocabulary");
      return;
  }
}

double ReplacementSampleSet::total_weight() const {
  double w = 0.0;
  for (const auto& v : variants) w += v.weight;
  return w;
}

ReplacementSampleSet build_single(const ReplacementStrategy& strategy, std::span<const std::string> tokens,
                                  std::size_t position, int set_size, std::uint64_t seed) {
  strategy.validate();
  if (position >= tokens.size()) throw ValidationError("replacement position out of range");
  if (set_size < 1) throw ValidationError("sample_set_size must be >= 1");
  Rng rng(seed);
  std::vector<std::vector<FillCandidate>> ranked;
  if (strategy.kind == StrategyKind::kBert) ranked.push_back(bert_candidates(strategy, tokens, position));
  ReplacementSampleSet set;
  set.origin = SetOrigin::kSingle;
  set.position = position;
  const auto count = variant_count(strategy, set_size, ranked);
  for (std::size_t r = 0; r < count; ++r) {
    set.variants.push_back(make_variant(strategy, tokens, {position}, rng, r, &ranked));
  }
  collapse_duplicates(set);
  return set;
}

ReplacementSampleSet build_multi(const ReplacementStrategy& strategy, const AnnotatedExample& example,
                                 ReplaceWhich which, int set_size, std::uint64_t seed, bool redraw_per_variant) {
  strategy.validate();
  if (set_size < 1) throw ValidationError("sample_set_size must be >= 1");
  std::vector<std::size_t> rationale, other;
  for (std::size_t i = 0; i < example.tokens.size(); ++i) {
    (example.rationale_mask.at(i) ? rationale : other).push_back(i);
  }
  if (rationale.empty()) throw DegenerateInputError("example has no rationale token");
  if (which == ReplaceWhich::kNonRationales && other.size() < rationale.size()) {
    throw DegenerateInputError("fewer non-rationale than rationale tokens");
  }
  Rng rng(seed);
  const std::span<const std::string> tokens(example.tokens);
  auto draw_subset = [&] {
    std::vector<std::size_t> pool = other;
    rng.shuffle(std::span(pool));
    pool.resize(rationale.size());
    std::sort(pool.begin(), pool.end());
    return pool;
  };
  auto ranked_for = [&](const std::vector<std::size_t>& positions) {
    std::vector<std::vector<FillCandidate>> ranked;
    if (strategy.kind == StrategyKind::kBert) {
      for (auto p : positions) ranked.push_back(bert_candidates(strategy, tokens, p));
    }
    return ranked;
  };

  ReplacementSampleSet set;
  set.origin = which == ReplaceWhich::kRationales ? SetOrigin::kRationaleSet : SetOrigin::kNonRationaleSet;
  std::vector<std::size_t> positions = which == ReplaceWhich::kRationales ? rationale : draw_subset();
  auto ranked = ranked_for(positions);
  const auto count = variant_count(strategy, set_size, ranked);
  for (std::size_t r = 0; r < count; ++r) {
    if (r > 0 && which == ReplaceWhich::kNonRationales && redraw_per_variant) {
      positions = draw_subset();
      ranked = ranked_for(positions);
    }
    set.variants.push_back(make_variant(strategy, tokens, positions, rng, r, &ranked));
  }
  collapse_duplicates(set);
  return set;
}

}  // namespace uimer
