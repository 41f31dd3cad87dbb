#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uimer/autograd.hpp"
#include "uimer/corpus.hpp"

namespace uimer {

enum class TaskKind { kSingleClassification, kSequenceLabeling, kPairClassification };

// Scalar differentiated by gradient attribution.
enum class ObjectiveKind { kTaskLoss, kGoldLogProb };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);
std::string to_string(ObjectiveKind kind);
ObjectiveKind objective_kind_from_string(const std::string& name);

// Lower clamp applied to probabilities before odds or logs; the upper clamp
// is 1 - kProbabilityClamp.
inline constexpr double kProbabilityClamp = 1e-7;

inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kSepToken = "[SEP]";

struct ModelConfig {
  TaskKind kind = TaskKind::kSingleClassification;
  int embed_dim = 32;
  int hidden_dim = 16;  // per direction
  double embed_init_scale = 0.3;
  bool zero_head = false;  // zero-initialized output layer
};

// Model input after vocabulary lookup. Pair inputs get a separator row that
// has no corresponding token.
struct ModelInput {
  std::vector<int> ids;
  std::vector<int> token_rows;  // row of each original token within ids
};

// Embedding -> bidirectional tanh RNN -> linear head. Classification and pair
// heads read the mean of the encoder states; labeling reads every position.
class TaskModel {
 public:
  TaskModel(ModelConfig config, std::span<const std::string> vocabulary,
            std::vector<std::string> labels, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  TaskKind kind() const { return config_.kind; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const std::vector<std::string>& labels() const { return labels_; }
  int label_id(const std::string& label) const;
  // Vocabulary tokens excluding the reserved ones.
  std::vector<std::string> content_tokens() const;

  ModelInput prepare(std::span<const std::string> tokens,
                     std::optional<std::size_t> pair_boundary = std::nullopt) const;
  ModelInput prepare(const AnnotatedExample& example) const {
    return prepare(example.tokens, example.pair_boundary);
  }

  ag::Var embed(const ModelInput& input) const;
  ag::Var encode_embeddings(const ag::Var& embeddings) const;
  // Log-probabilities: 1 x labels, or tokens x labels for labeling.
  ag::Var head(const ag::Var& states, const ModelInput& input) const;
  ag::Var log_probs(const ModelInput& input) const;
  // Forward pass with each token embedding scaled by its gate (tokens x 1);
  // a zero gate replaces the token by the zero baseline vector.
  ag::Var log_probs_gated(const ModelInput& input, const ag::Var& gates) const;
  // log p(gold | input), summed over positions for labeling (1 x 1).
  ag::Var gold_log_prob(const ModelInput& input, const Output& gold) const;
  ag::Var gold_log_prob_from(const ag::Var& log_probs, const ModelInput& input,
                             const Output& gold) const;

  std::vector<ag::Var> parameters() const;
  std::vector<std::string> parameter_names() const;
  // Parameters feeding the encoder states (embedding and recurrent weights).
  std::vector<ag::Var> encoder_parameters() const;
  // Deep copy with independent parameter storage.
  TaskModel clone() const;
  void copy_parameters_from(const TaskModel& other);

 private:
  ModelConfig config_;
  Vocabulary vocab_;
  std::vector<std::string> labels_;
  ag::Var embedding_;
  ag::Var fwd_in_, fwd_rec_, fwd_bias_;
  ag::Var bwd_in_, bwd_rec_, bwd_bias_;
  ag::Var out_w_, out_b_;

  friend void save_model(const TaskModel&, const std::filesystem::path&);
  friend TaskModel load_model(const std::filesystem::path&);
};

// Probability distribution(s): 1 x labels or tokens x labels.
ag::Matrix predict_distribution(const TaskModel& model, std::span<const std::string> tokens,
                                std::optional<std::size_t> pair_boundary = std::nullopt);
double gold_probability(const TaskModel& model, const AnnotatedExample& example);
// Argmax label, or argmax tag per token.
Output predict(const TaskModel& model, const AnnotatedExample& example);

struct TaskLoss {
  double value = 0.0;
  std::vector<double> per_example;
};

TaskLoss task_loss(const TaskModel& model, std::span<const AnnotatedExample> batch);
// Differentiable -log p(gold | x) for one example.
ag::Var task_loss_var(const TaskModel& model, const AnnotatedExample& example);

// d objective / d input embeddings, one row per token.
ag::Matrix input_gradient(const TaskModel& model, const AnnotatedExample& example,
                          ObjectiveKind objective);
// Same gradient kept differentiable with respect to the parameters.
ag::Var input_gradient_var(const TaskModel& model, const AnnotatedExample& example,
                           ObjectiveKind objective);

// Encoder hidden states, one row per token.
ag::Matrix encode(const TaskModel& model, std::span<const std::string> tokens,
                  std::optional<std::size_t> pair_boundary = std::nullopt);
ag::Var encode_var(const TaskModel& model, const ModelInput& input);

// Order-sensitive digest of parameter bits.
std::uint64_t parameter_checksum(std::span<const ag::Var> params);

void save_model(const TaskModel& model, const std::filesystem::path& path);
TaskModel load_model(const std::filesystem::path& path);

// Decoupled weight decay Adam.
class AdamW {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW(std::vector<ag::Var> params, Options options);
  void zero_grad();
  // Applies one update with the learning rate scaled by `lr_factor`.
  void step(double lr_factor = 1.0);
  const std::vector<ag::Var>& params() const { return params_; }

 private:
  std::vector<ag::Var> params_;
  Options options_;
  std::vector<ag::Matrix> m_, v_;
  long step_count_ = 0;
};

// Linear ramp to 1 over `warmup_steps`, then linear decay to 0 at `total_steps`.
double linear_warmup_factor(long step, long warmup_steps, long total_steps);

}  // namespace uimer
