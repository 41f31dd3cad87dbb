#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "uimer/attribution.hpp"
#include "uimer/autograd.hpp"
#include "uimer/replace.hpp"
#include "uimer/taskmodel.hpp"

namespace uimer {

enum class InterpretMethod { kGbGhaeini, kGbMargin, kIm, kDm };

std::string to_string(InterpretMethod method);
InterpretMethod interpret_method_from_string(const std::string& name);

// Floor for the largest non-rationale score in the dm ratio.
inline constexpr double kDmDenominatorFloor = 1e-6;

struct ObjectiveConfig {
  InterpretMethod method = InterpretMethod::kIm;
  double alpha = 1.0;
  double epsilon = 1.0;
  GradientReduction f_kind = GradientReduction::kSum;
  ObjectiveKind objective_kind = ObjectiveKind::kGoldLogProb;
  StrategyKind strategy = StrategyKind::kUniform;
  int set_size = 8;
  int bert_top_k = 8;
  bool stop_gradient = false;       // im: treat m_R, m_N as constants
  bool redraw_nonrationales = true; // im: fresh non-rationale subset per variant

  void validate() const;
  // True when alpha and epsilon lie in the tuned sweep ranges.
  bool in_sweep_range() const;
};

// Skip signal: std::nullopt when the mask has no contrast.
std::optional<double> l_int_gb(std::span<const double> a, std::span<const int> mask, InterpretMethod variant,
                               double epsilon);
std::optional<ag::Var> l_int_gb_var(const ag::Var& a, std::span<const int> mask, InterpretMethod variant,
                                    double epsilon);

double l_int_im(double a_r, double a_n, double epsilon);
// Takes gap = a_N - a_R.
ag::Var l_int_im_var(const ag::Var& gap, double epsilon);

struct DmLoss {
  double value = 0.0;
  bool floored = false;
};

std::optional<DmLoss> l_int_dm(std::span<const double> a, std::span<const int> mask);
std::optional<ag::Var> l_int_dm_var(const ag::Var& a, std::span<const int> mask, bool* floored = nullptr);

// Interpretation backend consumed by the combined objective.
struct Interpreter {
  const ReplacementStrategy* strategy = nullptr;  // im
  const Extractor* extractor = nullptr;           // dm
};

struct CombinedObjective {
  ag::Var total;
  double task = 0.0;    // mean task loss
  double l_int = 0.0;   // mean over contributing examples
  int contributing = 0;
  int skipped = 0;
  int floored = 0;
};

// Mean task loss + alpha * mean L_int over non-skipped examples. `seed`
// fixes the replacement sets drawn for im.
CombinedObjective combined_objective(const TaskModel& model, std::span<const AnnotatedExample> batch,
                                     const ObjectiveConfig& config, const Interpreter& interpreter,
                                     std::uint64_t seed);

// L_int of one example without building a graph; nullopt when skipped.
std::optional<double> l_int_value(const TaskModel& model, const AnnotatedExample& example,
                                  const ObjectiveConfig& config, const Interpreter& interpreter, std::uint64_t seed);

}  // namespace uimer
