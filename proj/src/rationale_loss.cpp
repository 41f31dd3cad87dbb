#include "uimer/rationale_loss.hpp"

#include <algorithm>
#include <vector>

#include "uimer/errors.hpp"

namespace uimer {
namespace {

struct Split {
  std::vector<int> rationale, other;
};

Split split(std::span<const int> mask) {
  Split s;
  for (std::size_t i = 0; i < mask.size(); ++i) (mask[i] ? s.rationale : s.other).push_back(static_cast<int>(i));
  return s;
}

void check_aligned(std::size_t n, std::span<const int> mask) {
  if (n != mask.size()) throw ValidationError("attribution scores and mask differ in length");
}

}  // namespace

std::string to_string(InterpretMethod method) {
  switch (method) {
    case InterpretMethod::kGbGhaeini: return "gb_ghaeini";
    case InterpretMethod::kGbMargin: return "gb_margin";
    case InterpretMethod::kIm: return "im";
    case InterpretMethod::kDm: return "dm";
  }
  return "?";
}

InterpretMethod interpret_method_from_string(const std::string& name) {
  const auto n = to_lower(name);
  if (n == "gb_ghaeini") return InterpretMethod::kGbGhaeini;
  if (n == "gb_margin") return InterpretMethod::kGbMargin;
  if (n == "im") return InterpretMethod::kIm;
  if (n == "dm") return InterpretMethod::kDm;
  throw ConfigError("unknown method '" + name + "'");
}

void ObjectiveConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (set_size < 1) throw ConfigError("sample_set_size must be >= 1");
  if (bert_top_k < 1) throw ConfigError("bert_top_k must be >= 1");
}

bool ObjectiveConfig::in_sweep_range() const {
  return alpha >= 0.001 && alpha <= 20.0 && epsilon >= 0.01 && epsilon <= 10.0;
}

std::optional<double> l_int_gb(std::span<const double> a, std::span<const int> mask, InterpretMethod variant,
                               double epsilon) {
  ag::NoGradGuard guard;
  ag::Matrix m(static_cast<Eigen::Index>(a.size()), 1);
  for (std::size_t i = 0; i < a.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = a[i];
  auto v = l_int_gb_var(ag::constant(std::move(m)), mask, variant, epsilon);
  if (!v) return std::nullopt;
  return v->item();
}

std::optional<ag::Var> l_int_gb_var(const ag::Var& a, std::span<const int> mask, InterpretMethod variant,
                                    double epsilon) {
  check_aligned(static_cast<std::size_t>(a.rows()), mask);
  const auto s = split(mask);
  if (s.rationale.empty() || s.other.empty()) return std::nullopt;
  const auto r_sum = ag::sum(ag::gather_rows(a, s.rationale));
  if (variant == InterpretMethod::kGbGhaeini) return ag::neg(r_sum);
  if (variant != InterpretMethod::kGbMargin) throw ConfigError("l_int_gb takes gb_ghaeini or gb_margin");
  const auto r_mean = ag::scale(r_sum, 1.0 / static_cast<double>(s.rationale.size()));
  const auto n_mean = ag::mean(ag::gather_rows(a, s.other));
  return ag::relu(ag::add_scalar(ag::sub(n_mean, r_mean), epsilon));
}

double l_int_im(double a_r, double a_n, double epsilon) { return std::max(a_n - a_r + epsilon, 0.0); }

ag::Var l_int_im_var(const ag::Var& gap, double epsilon) { return ag::relu(ag::add_scalar(gap, epsilon)); }

std::optional<DmLoss> l_int_dm(std::span<const double> a, std::span<const int> mask) {
  ag::NoGradGuard guard;
  ag::Matrix m(static_cast<Eigen::Index>(a.size()), 1);
  for (std::size_t i = 0; i < a.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = a[i];
  bool floored = false;
  auto v = l_int_dm_var(ag::constant(std::move(m)), mask, &floored);
  if (!v) return std::nullopt;
  return DmLoss{v->item(), floored};
}

std::optional<ag::Var> l_int_dm_var(const ag::Var& a, std::span<const int> mask, bool* floored) {
  check_aligned(static_cast<std::size_t>(a.rows()), mask);
  const auto s = split(mask);
  if (s.rationale.empty() || s.other.empty()) return std::nullopt;
  int arg = s.other.front();
  for (int i : s.other) {
    if (a.value()(i, 0) > a.value()(arg, 0)) arg = i;
  }
  ag::Var denom;
  const bool clamp = a.value()(arg, 0) <= kDmDenominatorFloor;
  if (floored) *floored = clamp;
  if (clamp) {
    denom = ag::scalar(kDmDenominatorFloor);
  } else {
    const int idx[1] = {arg};
    denom = ag::gather_rows(a, idx);
  }
  const auto ratio = ag::div(ag::gather_rows(a, s.rationale), denom);
  // min(r - 1, 0) == -relu(1 - r)
  const auto shortfall = ag::relu(ag::add_scalar(ag::neg(ratio), 1.0));
  return ag::sum(ag::square(shortfall));
}

namespace {

std::optional<ag::Var> l_int_var(const TaskModel& model, const AnnotatedExample& ex, const ObjectiveConfig& config,
                                 const Interpreter& interpreter, std::uint64_t seed, bool* floored) {
  switch (config.method) {
    case InterpretMethod::kGbGhaeini:
    case InterpretMethod::kGbMargin: {
      const auto s = split(ex.rationale_mask);
      if (s.rationale.empty() || s.other.empty()) return std::nullopt;
      const auto a = gradient_attribution_var(model, ex, config.f_kind, config.objective_kind);
      return l_int_gb_var(a, ex.rationale_mask, config.method, config.epsilon);
    }
    case InterpretMethod::kIm: {
      if (!interpreter.strategy) throw ConfigError("im objective needs a replacement strategy");
      ReplacementSampleSet set_r, set_n;
      try {
        set_r = build_multi(*interpreter.strategy, ex, ReplaceWhich::kRationales, config.set_size,
                            derive_seed(seed, 1), config.redraw_nonrationales);
        set_n = build_multi(*interpreter.strategy, ex, ReplaceWhich::kNonRationales, config.set_size,
                            derive_seed(seed, 2), config.redraw_nonrationales);
      } catch (const DegenerateInputError&) {
        return std::nullopt;
      }
      return l_int_im_var(im_gap_var(model, ex, set_r, set_n, config.stop_gradient), config.epsilon);
    }
    case InterpretMethod::kDm: {
      if (!interpreter.extractor) throw ConfigError("dm objective needs an extractor");
      const auto s = split(ex.rationale_mask);
      if (s.rationale.empty() || s.other.empty()) return std::nullopt;
      return l_int_dm_var(extractor_scores_var(*interpreter.extractor, model, ex), ex.rationale_mask, floored);
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<double> l_int_value(const TaskModel& model, const AnnotatedExample& example,
                                  const ObjectiveConfig& config, const Interpreter& interpreter, std::uint64_t seed) {
  // Gradient methods need the graph of the first derivative.
  std::optional<ag::NoGradGuard> guard;
  if (config.method == InterpretMethod::kIm || config.method == InterpretMethod::kDm) guard.emplace();
  auto v = l_int_var(model, example, config, interpreter, seed, nullptr);
  if (!v) return std::nullopt;
  return v->item();
}

CombinedObjective combined_objective(const TaskModel& model, std::span<const AnnotatedExample> batch,
                                     const ObjectiveConfig& config, const Interpreter& interpreter,
                                     std::uint64_t seed) {
  config.validate();
  if (batch.empty()) throw ValidationError("combined objective needs a non-empty batch");
  CombinedObjective out;
  ag::Var task = ag::scalar(0.0);
  for (const auto& ex : batch) task = ag::add(task, task_loss_var(model, ex));
  task = ag::scale(task, 1.0 / static_cast<double>(batch.size()));
  out.task = task.item();
  out.total = task;
  if (config.alpha == 0.0) return out;

  ag::Var l_int = ag::scalar(0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    bool floored = false;
    auto v = l_int_var(model, batch[i], config, interpreter, derive_seed(seed, i), &floored);
    if (!v) {
      ++out.skipped;
      continue;
    }
    ++out.contributing;
    out.floored += floored ? 1 : 0;
    l_int = ag::add(l_int, *v);
  }
  if (out.contributing == 0) return out;
  l_int = ag::scale(l_int, 1.0 / static_cast<double>(out.contributing));
  out.l_int = l_int.item();
  out.total = ag::add(task, ag::scale(l_int, config.alpha));
  return out;
}

}  // namespace uimer
