#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uimer/autograd.hpp"
#include "uimer/random.hpp"
#include "uimer/replace.hpp"
#include "uimer/taskmodel.hpp"

namespace uimer {

enum class GradientReduction { kSum, kL1 };
enum class AttributionMethod { kGradientSum, kGradientL1, kInputMarginalization, kExtractor };

std::string to_string(GradientReduction f);
GradientReduction gradient_reduction_from_string(const std::string& name);
std::string to_string(AttributionMethod method);

struct AttributionResult {
  AttributionMethod method = AttributionMethod::kGradientSum;
  std::optional<std::vector<double>> per_token;
  std::optional<std::pair<double, double>> multi_token;  // (a_R, a_N)
  std::vector<std::string> warnings;
};

double clamp_probability(double p);
// log2(p / (1 - p)) on the clamped probability.
double log2_odds(double p);
ag::Var log2_odds(const ag::Var& p);

AttributionResult gradient_attribution(const TaskModel& model, const AnnotatedExample& example,
                                       GradientReduction f, ObjectiveKind objective);
// tokens x 1 scores that stay differentiable with respect to the parameters.
ag::Var gradient_attribution_var(const TaskModel& model, const AnnotatedExample& example,
                                 GradientReduction f, ObjectiveKind objective);

// sum_v q(v) p(y | v) over a stored variant set, as a differentiable scalar.
ag::Var weighted_gold_probability(const TaskModel& model, const AnnotatedExample& example,
                                  const ReplacementSampleSet& set);

struct ImSingleDetail {
  double score = 0.0;
  double p = 0.0;
  double m = 0.0;  // before clamping
  bool clamped = false;
  ReplacementSampleSet set;
};

ImSingleDetail im_single_detail(const TaskModel& model, const AnnotatedExample& example,
                                const ReplacementStrategy& strategy, std::size_t position, int set_size,
                                std::uint64_t seed);
double im_single_attribution(const TaskModel& model, const AnnotatedExample& example,
                             const ReplacementStrategy& strategy, std::size_t position, int set_size,
                             std::uint64_t seed);

struct ImMultiDetail {
  double a_r = 0.0;
  double a_n = 0.0;
  double p = 0.0;
  double m_r = 0.0;
  double m_n = 0.0;
  std::vector<std::string> warnings;
  ReplacementSampleSet set_r;
  ReplacementSampleSet set_n;
};

struct ImOptions {
  int set_size = 8;
  bool redraw_nonrationales = true;
};

// Throws DegenerateInputError when no contrast can be formed; callers treat
// that as a skip.
ImMultiDetail im_multi_detail(const TaskModel& model, const AnnotatedExample& example,
                              const ReplacementStrategy& strategy, ImOptions options, std::uint64_t seed);
AttributionResult im_multi_attribution(const TaskModel& model, const AnnotatedExample& example,
                                       const ReplacementStrategy& strategy, int set_size, std::uint64_t seed);

// a_N - a_R = log2 odds(m_R) - log2 odds(m_N) over stored sets. With
// `stop_gradient` both m terms are treated as constants.
ag::Var im_gap_var(const TaskModel& model, const AnnotatedExample& example, const ReplacementSampleSet& set_r,
                   const ReplacementSampleSet& set_n, bool stop_gradient = false);

struct ExtractorConfig {
  int hidden_dim = 16;
  double temperature = 0.5;
  double lambda_sparse = 1.0;
  double lambda_faith = 1.0;
  double init_bias = 2.0;  // gates start mostly open
};

// Per-token gate over encoder states: 1-hidden-layer probe followed by a
// binary-concrete relaxation while training and the expected gate otherwise.
class Extractor {
 public:
  Extractor(int state_dim, ExtractorConfig config, std::uint64_t seed);

  const ExtractorConfig& config() const { return config_; }
  ag::Var gate_logits(const ag::Var& states) const;
  ag::Var expected_gates(const ag::Var& states) const;
  ag::Var sampled_gates(const ag::Var& states, Rng& rng) const;
  std::vector<ag::Var> parameters() const { return {w1_, b1_, w2_, b2_}; }
  Extractor clone() const;

 private:
  ExtractorConfig config_;
  ag::Var w1_, b1_, w2_, b2_;
};

// Scores in [0, 1] for each token; differentiable into the encoder.
ag::Var extractor_scores_var(const Extractor& extractor, const TaskModel& model, const AnnotatedExample& example);
AttributionResult extractor_attribution(const Extractor& extractor, const TaskModel& model,
                                        std::span<const std::string> tokens,
                                        std::optional<std::size_t> pair_boundary = std::nullopt);

// Symmetric KL between two rows-of-distributions given as log-probabilities,
// averaged over rows.
ag::Var symmetric_kl(const ag::Var& log_p, const ag::Var& log_q);

struct ExtractorObjective {
  double value = 0.0;
  double sparsity = 0.0;
  double faithfulness = 0.0;
};

// lambda_sparse * mean gate + lambda_faith * divergence, averaged over the
// batch. `rng` selects sampled gates; null uses expected gates.
ag::Var extractor_objective_var(const Extractor& extractor, const TaskModel& model,
                                std::span<const AnnotatedExample> batch, Rng* rng);
ExtractorObjective extractor_objective(const Extractor& extractor, const TaskModel& model,
                                       std::span<const AnnotatedExample> batch);
// Same objective for fixed gates, one column vector per example.
ExtractorObjective extractor_objective_for_gates(const TaskModel& model, std::span<const AnnotatedExample> batch,
                                                 std::span<const ag::Matrix> gates, const ExtractorConfig& config);

}  // namespace uimer
