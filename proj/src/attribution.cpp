#include "uimer/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "uimer/errors.hpp"

namespace uimer {
namespace {

constexpr double kHi = 1.0 - kProbabilityClamp;

ag::Matrix random_matrix(int rows, int cols, double scale, Rng& rng) {
  ag::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = scale * rng.normal();
  return m;
}

}  // namespace

std::string to_string(GradientReduction f) { return f == GradientReduction::kSum ? "sum" : "l1"; }

GradientReduction gradient_reduction_from_string(const std::string& name) {
  const auto n = to_lower(name);
  if (n == "sum") return GradientReduction::kSum;
  if (n == "l1") return GradientReduction::kL1;
  throw ConfigError("unknown f_kind '" + name + "'");
}

std::string to_string(AttributionMethod method) {
  switch (method) {
    case AttributionMethod::kGradientSum: return "gradient_sum";
    case AttributionMethod::kGradientL1: return "gradient_l1";
    case AttributionMethod::kInputMarginalization: return "input_marginalization";
    case AttributionMethod::kExtractor: return "extractor";
  }
  return "?";
}

double clamp_probability(double p) { return std::clamp(p, kProbabilityClamp, kHi); }

double log2_odds(double p) {
  const double c = clamp_probability(p);
  return std::log2(c) - std::log2(1.0 - c);
}

ag::Var log2_odds(const ag::Var& p) {
  const auto c = ag::clamp(p, kProbabilityClamp, kHi);
  return ag::sub(ag::log2(c), ag::log2(ag::add_scalar(ag::neg(c), 1.0)));
}

ag::Var gradient_attribution_var(const TaskModel& model, const AnnotatedExample& example, GradientReduction f,
                                 ObjectiveKind objective) {
  const auto g = input_gradient_var(model, example, objective);
  return ag::sum_cols(f == GradientReduction::kSum ? g : ag::abs(g));
}

AttributionResult gradient_attribution(const TaskModel& model, const AnnotatedExample& example, GradientReduction f,
                                       ObjectiveKind objective) {
  const ag::Matrix g = input_gradient(model, example, objective);
  AttributionResult r;
  r.method = f == GradientReduction::kSum ? AttributionMethod::kGradientSum : AttributionMethod::kGradientL1;
  std::vector<double> a(static_cast<std::size_t>(g.rows()));
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    a[static_cast<std::size_t>(i)] = f == GradientReduction::kSum ? g.row(i).sum() : g.row(i).cwiseAbs().sum();
  }
  r.per_token = std::move(a);
  return r;
}

ag::Var weighted_gold_probability(const TaskModel& model, const AnnotatedExample& example,
                                  const ReplacementSampleSet& set) {
  ag::Var m = ag::scalar(0.0);
  for (const auto& v : set.variants) {
    const auto lp = model.gold_log_prob(model.prepare(v.tokens, example.pair_boundary), example.output);
    m = ag::add(m, ag::scale(ag::exp(lp), v.weight));
  }
  return m;
}

ImSingleDetail im_single_detail(const TaskModel& model, const AnnotatedExample& example,
                                const ReplacementStrategy& strategy, std::size_t position, int set_size,
                                std::uint64_t seed) {
  ag::NoGradGuard guard;
  ImSingleDetail d;
  d.set = build_single(strategy, example.tokens, position, set_size, seed);
  d.p = gold_probability(model, example);
  d.m = weighted_gold_probability(model, example, d.set).item();
  d.clamped = d.m != clamp_probability(d.m);
  d.score = log2_odds(d.p) - log2_odds(d.m);
  return d;
}

double im_single_attribution(const TaskModel& model, const AnnotatedExample& example,
                             const ReplacementStrategy& strategy, std::size_t position, int set_size,
                             std::uint64_t seed) {
  return im_single_detail(model, example, strategy, position, set_size, seed).score;
}

ImMultiDetail im_multi_detail(const TaskModel& model, const AnnotatedExample& example,
                              const ReplacementStrategy& strategy, ImOptions options, std::uint64_t seed) {
  ag::NoGradGuard guard;
  ImMultiDetail d;
  d.set_r = build_multi(strategy, example, ReplaceWhich::kRationales, options.set_size, derive_seed(seed, 1),
                        options.redraw_nonrationales);
  d.set_n = build_multi(strategy, example, ReplaceWhich::kNonRationales, options.set_size, derive_seed(seed, 2),
                        options.redraw_nonrationales);
  d.p = gold_probability(model, example);
  d.m_r = weighted_gold_probability(model, example, d.set_r).item();
  d.m_n = weighted_gold_probability(model, example, d.set_n).item();
  if (d.m_r != clamp_probability(d.m_r)) d.warnings.push_back("m_R clamped into (0,1)");
  if (d.m_n != clamp_probability(d.m_n)) d.warnings.push_back("m_N clamped into (0,1)");
  d.a_r = log2_odds(d.p) - log2_odds(d.m_r);
  d.a_n = log2_odds(d.p) - log2_odds(d.m_n);
  return d;
}

AttributionResult im_multi_attribution(const TaskModel& model, const AnnotatedExample& example,
                                       const ReplacementStrategy& strategy, int set_size, std::uint64_t seed) {
  auto d = im_multi_detail(model, example, strategy, {.set_size = set_size}, seed);
  AttributionResult r;
  r.method = AttributionMethod::kInputMarginalization;
  r.multi_token = std::pair{d.a_r, d.a_n};
  r.warnings = std::move(d.warnings);
  return r;
}

ag::Var im_gap_var(const TaskModel& model, const AnnotatedExample& example, const ReplacementSampleSet& set_r,
                   const ReplacementSampleSet& set_n, bool stop_gradient) {
  auto m_r = weighted_gold_probability(model, example, set_r);
  auto m_n = weighted_gold_probability(model, example, set_n);
  if (stop_gradient) {
    m_r = ag::detach(m_r);
    m_n = ag::detach(m_n);
  }
  return ag::sub(log2_odds(m_r), log2_odds(m_n));
}

Extractor::Extractor(int state_dim, ExtractorConfig config, std::uint64_t seed) : config_(config) {
  if (state_dim < 1 || config_.hidden_dim < 1) throw ConfigError("extractor dimensions must be positive");
  if (config_.temperature <= 0.0) throw ConfigError("extractor temperature must be positive");
  Rng rng(seed);
  w1_ = ag::parameter(random_matrix(state_dim, config_.hidden_dim, 1.0 / std::sqrt(state_dim), rng));
  b1_ = ag::parameter(ag::Matrix::Zero(1, config_.hidden_dim));
  w2_ = ag::parameter(random_matrix(config_.hidden_dim, 1, 1.0 / std::sqrt(config_.hidden_dim), rng));
  b2_ = ag::parameter(ag::Matrix::Constant(1, 1, config_.init_bias));
}

ag::Var Extractor::gate_logits(const ag::Var& states) const {
  const auto h = ag::tanh(ag::add(ag::matmul(states, w1_), b1_));
  return ag::add(ag::matmul(h, w2_), b2_);
}

ag::Var Extractor::expected_gates(const ag::Var& states) const { return ag::sigmoid(gate_logits(states)); }

ag::Var Extractor::sampled_gates(const ag::Var& states, Rng& rng) const {
  const auto logits = gate_logits(states);
  ag::Matrix noise(logits.rows(), 1);
  for (Eigen::Index i = 0; i < noise.rows(); ++i) {
    double u = rng.uniform();
    u = std::clamp(u, 1e-6, 1.0 - 1e-6);
    noise(i, 0) = std::log(u) - std::log(1.0 - u);
  }
  return ag::sigmoid(ag::scale(ag::add(logits, ag::constant(std::move(noise))), 1.0 / config_.temperature));
}

Extractor Extractor::clone() const {
  Extractor e = *this;
  e.w1_ = ag::parameter(w1_.value());
  e.b1_ = ag::parameter(b1_.value());
  e.w2_ = ag::parameter(w2_.value());
  e.b2_ = ag::parameter(b2_.value());
  return e;
}

ag::Var extractor_scores_var(const Extractor& extractor, const TaskModel& model, const AnnotatedExample& example) {
  return extractor.expected_gates(encode_var(model, model.prepare(example)));
}

AttributionResult extractor_attribution(const Extractor& extractor, const TaskModel& model,
                                        std::span<const std::string> tokens,
                                        std::optional<std::size_t> pair_boundary) {
  ag::NoGradGuard guard;
  const auto gates = extractor.expected_gates(encode_var(model, model.prepare(tokens, pair_boundary))).value();
  AttributionResult r;
  r.method = AttributionMethod::kExtractor;
  r.per_token = std::vector<double>(gates.data(), gates.data() + gates.size());
  return r;
}

ag::Var symmetric_kl(const ag::Var& log_p, const ag::Var& log_q) {
  const auto diff = ag::mul(ag::sub(ag::exp(log_p), ag::exp(log_q)), ag::sub(log_p, log_q));
  return ag::scale(ag::sum(diff), 1.0 / static_cast<double>(log_p.rows()));
}

namespace {

struct ObjectiveParts {
  ag::Var sparsity, faithfulness;
};

ObjectiveParts objective_parts(const TaskModel& model, const AnnotatedExample& example, const ag::Var& gates) {
  const auto input = model.prepare(example);
  const auto clean = ag::detach(model.log_probs(input));
  const auto masked = model.log_probs_gated(input, gates);
  return {ag::mean(gates), symmetric_kl(clean, masked)};
}

ag::Var combine(const ExtractorConfig& config, const ag::Var& sparsity, const ag::Var& faith) {
  return ag::add(ag::scale(sparsity, config.lambda_sparse), ag::scale(faith, config.lambda_faith));
}

}  // namespace

ag::Var extractor_objective_var(const Extractor& extractor, const TaskModel& model,
                                std::span<const AnnotatedExample> batch, Rng* rng) {
  if (batch.empty()) throw ValidationError("extractor objective needs a non-empty batch");
  ag::Var total = ag::scalar(0.0);
  for (const auto& ex : batch) {
    const auto states = ag::detach(encode_var(model, model.prepare(ex)));
    const auto gates = rng ? extractor.sampled_gates(states, *rng) : extractor.expected_gates(states);
    const auto parts = objective_parts(model, ex, gates);
    total = ag::add(total, combine(extractor.config(), parts.sparsity, parts.faithfulness));
  }
  return ag::scale(total, 1.0 / static_cast<double>(batch.size()));
}

ExtractorObjective extractor_objective_for_gates(const TaskModel& model, std::span<const AnnotatedExample> batch,
                                                 std::span<const ag::Matrix> gates, const ExtractorConfig& config) {
  if (batch.empty() || gates.size() != batch.size()) throw ValidationError("one gate vector per example required");
  ag::NoGradGuard guard;
  ExtractorObjective out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto parts = objective_parts(model, batch[i], ag::constant(gates[i]));
    out.sparsity += parts.sparsity.item();
    out.faithfulness += parts.faithfulness.item();
  }
  const auto n = static_cast<double>(batch.size());
  out.sparsity /= n;
  out.faithfulness /= n;
  out.value = config.lambda_sparse * out.sparsity + config.lambda_faith * out.faithfulness;
  return out;
}

ExtractorObjective extractor_objective(const Extractor& extractor, const TaskModel& model,
                                       std::span<const AnnotatedExample> batch) {
  std::vector<ag::Matrix> gates;
  {
    ag::NoGradGuard guard;
    for (const auto& ex : batch) gates.push_back(extractor_scores_var(extractor, model, ex).value());
  }
  return extractor_objective_for_gates(model, batch, gates, extractor.config());
}

}  // namespace uimer
