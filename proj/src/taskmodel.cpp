#include "uimer/taskmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "uimer/errors.hpp"
#include "uimer/random.hpp"

namespace uimer {

using nlohmann::json;

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kSingleClassification: return "single_classification";
    case TaskKind::kSequenceLabeling: return "sequence_labeling";
    case TaskKind::kPairClassification: return "pair_classification";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "single_classification" || name == "ic") return TaskKind::kSingleClassification;
  if (name == "sequence_labeling" || name == "sf") return TaskKind::kSequenceLabeling;
  if (name == "pair_classification" || name == "nli") return TaskKind::kPairClassification;
  throw ConfigError("unknown task kind " + name);
}

std::string to_string(ObjectiveKind kind) {
  return kind == ObjectiveKind::kTaskLoss ? "task_loss" : "gold_log_prob";
}

ObjectiveKind objective_kind_from_string(const std::string& name) {
  if (name == "task_loss") return ObjectiveKind::kTaskLoss;
  if (name == "gold_log_prob") return ObjectiveKind::kGoldLogProb;
  throw ConfigError("unknown objective kind " + name);
}

namespace {

ag::Matrix xavier(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / (rows + cols));
  ag::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.uniform(-bound, bound);
  return m;
}

ag::Var copy_param(const ag::Var& v) { return ag::parameter(v.value()); }

}  // namespace

TaskModel::TaskModel(ModelConfig config, std::span<const std::string> vocabulary,
                     std::vector<std::string> labels, std::uint64_t seed)
    : config_(config), labels_(std::move(labels)) {
  if (labels_.empty()) throw ConfigError("task model needs at least one label");
  vocab_.add(std::string(kUnkToken));
  vocab_.add(std::string(kMaskToken));
  vocab_.add(std::string(kSepToken));
  for (const auto& tok : vocabulary) vocab_.add(tok);

  Rng rng(seed);
  const int d = config_.embed_dim;
  const int h = config_.hidden_dim;
  const int n_labels = static_cast<int>(labels_.size());
  ag::Matrix emb(static_cast<Eigen::Index>(vocab_.size()), d);
  for (Eigen::Index i = 0; i < emb.size(); ++i) emb(i) = config_.embed_init_scale * rng.normal();
  embedding_ = ag::parameter(std::move(emb));
  fwd_in_ = ag::parameter(xavier(d, h, rng));
  fwd_rec_ = ag::parameter(xavier(h, h, rng));
  fwd_bias_ = ag::parameter(ag::Matrix::Zero(1, h));
  bwd_in_ = ag::parameter(xavier(d, h, rng));
  bwd_rec_ = ag::parameter(xavier(h, h, rng));
  bwd_bias_ = ag::parameter(ag::Matrix::Zero(1, h));
  out_w_ = ag::parameter(config_.zero_head ? ag::Matrix::Zero(2 * h, n_labels)
                                           : xavier(2 * h, n_labels, rng));
  out_b_ = ag::parameter(ag::Matrix::Zero(1, n_labels));
}

int TaskModel::label_id(const std::string& label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) throw ValidationError("label not known to the model: " + label);
  return static_cast<int>(it - labels_.begin());
}

std::vector<std::string> TaskModel::content_tokens() const {
  return {vocab_.tokens().begin() + 3, vocab_.tokens().end()};
}

ModelInput TaskModel::prepare(std::span<const std::string> tokens,
                              std::optional<std::size_t> pair_boundary) const {
  if (tokens.empty()) throw ValidationError("empty token sequence");
  ModelInput in;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (pair_boundary && i == *pair_boundary) in.ids.push_back(2);
    in.token_rows.push_back(static_cast<int>(in.ids.size()));
    in.ids.push_back(vocab_.find(tokens[i]).value_or(0));
  }
  return in;
}

ag::Var TaskModel::embed(const ModelInput& input) const { return ag::gather_rows(embedding_, input.ids); }

ag::Var TaskModel::encode_embeddings(const ag::Var& x) const {
  const int n = static_cast<int>(x.rows());
  auto run = [&](const ag::Var& w_in, const ag::Var& w_rec, const ag::Var& bias, bool reverse) {
    const ag::Var projected = ag::add(ag::matmul(x, w_in), bias);
    std::vector<ag::Var> states(static_cast<std::size_t>(n));
    ag::Var prev;
    for (int k = 0; k < n; ++k) {
      const int t = reverse ? n - 1 - k : k;
      ag::Var pre = ag::row(projected, t);
      if (prev.defined()) pre = ag::add(pre, ag::matmul(prev, w_rec));
      prev = ag::tanh(pre);
      states[static_cast<std::size_t>(t)] = prev;
    }
    return ag::concat_rows(states);
  };
  const std::vector<ag::Var> both{run(fwd_in_, fwd_rec_, fwd_bias_, false),
                                  run(bwd_in_, bwd_rec_, bwd_bias_, true)};
  return ag::concat_cols(both);
}

ag::Var TaskModel::head(const ag::Var& states, const ModelInput& input) const {
  if (config_.kind == TaskKind::kSequenceLabeling) {
    const auto token_states = ag::gather_rows(states, input.token_rows);
    return ag::log_softmax_rows(ag::add(ag::matmul(token_states, out_w_), out_b_));
  }
  const auto pooled = ag::scale(ag::sum_rows(states), 1.0 / static_cast<double>(states.rows()));
  return ag::log_softmax_rows(ag::add(ag::matmul(pooled, out_w_), out_b_));
}

ag::Var TaskModel::log_probs(const ModelInput& input) const {
  return head(encode_embeddings(embed(input)), input);
}

ag::Var TaskModel::log_probs_gated(const ModelInput& input, const ag::Var& gates) const {
  if (gates.rows() != static_cast<Eigen::Index>(input.token_rows.size()) || gates.cols() != 1) {
    throw ValidationError("gates must be a column with one entry per token");
  }
  const auto rows = static_cast<Eigen::Index>(input.ids.size());
  // Separator rows keep gate 1.
  ag::Matrix base = ag::Matrix::Ones(rows, 1);
  for (int r : input.token_rows) base(r, 0) = 0.0;
  const auto row_gates = ag::add(ag::constant(std::move(base)),
                                 ag::scatter_rows(gates, input.token_rows, rows));
  const auto x = ag::mul(embed(input), row_gates);
  return head(encode_embeddings(x), input);
}

ag::Var TaskModel::gold_log_prob_from(const ag::Var& lp, const ModelInput& input,
                                      const Output& gold) const {
  ag::Matrix onehot = ag::Matrix::Zero(lp.rows(), lp.cols());
  if (config_.kind == TaskKind::kSequenceLabeling) {
    const auto* tags = std::get_if<std::vector<std::string>>(&gold);
    if (!tags || tags->size() != input.token_rows.size()) {
      throw ValidationError("labeling model needs one gold tag per token");
    }
    for (std::size_t t = 0; t < tags->size(); ++t) onehot(static_cast<Eigen::Index>(t), label_id((*tags)[t])) = 1.0;
  } else {
    const auto* label = std::get_if<std::string>(&gold);
    if (!label) throw ValidationError("classification model needs a gold label");
    onehot(0, label_id(*label)) = 1.0;
  }
  return ag::sum(ag::mul(lp, ag::constant(std::move(onehot))));
}

ag::Var TaskModel::gold_log_prob(const ModelInput& input, const Output& gold) const {
  return gold_log_prob_from(log_probs(input), input, gold);
}

std::vector<ag::Var> TaskModel::parameters() const {
  return {embedding_, fwd_in_, fwd_rec_, fwd_bias_, bwd_in_, bwd_rec_, bwd_bias_, out_w_, out_b_};
}

std::vector<std::string> TaskModel::parameter_names() const {
  return {"embedding", "fwd_in", "fwd_rec", "fwd_bias", "bwd_in", "bwd_rec", "bwd_bias", "out_w", "out_b"};
}

std::vector<ag::Var> TaskModel::encoder_parameters() const {
  return {embedding_, fwd_in_, fwd_rec_, fwd_bias_, bwd_in_, bwd_rec_, bwd_bias_};
}

TaskModel TaskModel::clone() const {
  TaskModel copy = *this;
  copy.embedding_ = copy_param(embedding_);
  copy.fwd_in_ = copy_param(fwd_in_);
  copy.fwd_rec_ = copy_param(fwd_rec_);
  copy.fwd_bias_ = copy_param(fwd_bias_);
  copy.bwd_in_ = copy_param(bwd_in_);
  copy.bwd_rec_ = copy_param(bwd_rec_);
  copy.bwd_bias_ = copy_param(bwd_bias_);
  copy.out_w_ = copy_param(out_w_);
  copy.out_b_ = copy_param(out_b_);
  return copy;
}

void TaskModel::copy_parameters_from(const TaskModel& other) {
  auto mine = parameters();
  const auto theirs = other.parameters();
  for (std::size_t i = 0; i < mine.size(); ++i) mine[i].mutable_value() = theirs[i].value();
}

ag::Matrix predict_distribution(const TaskModel& model, std::span<const std::string> tokens,
                                std::optional<std::size_t> pair_boundary) {
  ag::NoGradGuard guard;
  return model.log_probs(model.prepare(tokens, pair_boundary)).value().array().exp();
}

double gold_probability(const TaskModel& model, const AnnotatedExample& example) {
  ag::NoGradGuard guard;
  return std::exp(model.gold_log_prob(model.prepare(example), example.output).item());
}

Output predict(const TaskModel& model, const AnnotatedExample& example) {
  const auto dist = predict_distribution(model, example.tokens, example.pair_boundary);
  if (model.kind() == TaskKind::kSequenceLabeling) {
    std::vector<std::string> tags;
    for (Eigen::Index t = 0; t < dist.rows(); ++t) {
      Eigen::Index best;
      dist.row(t).maxCoeff(&best);
      tags.push_back(model.labels()[static_cast<std::size_t>(best)]);
    }
    return tags;
  }
  Eigen::Index best;
  dist.row(0).maxCoeff(&best);
  return model.labels()[static_cast<std::size_t>(best)];
}

ag::Var task_loss_var(const TaskModel& model, const AnnotatedExample& example) {
  return ag::neg(model.gold_log_prob(model.prepare(example), example.output));
}

TaskLoss task_loss(const TaskModel& model, std::span<const AnnotatedExample> batch) {
  if (batch.empty()) throw ValidationError("task loss needs a non-empty batch");
  ag::NoGradGuard guard;
  TaskLoss loss;
  for (const auto& ex : batch) loss.per_example.push_back(task_loss_var(model, ex).item());
  double total = 0.0;
  for (double v : loss.per_example) total += v;
  loss.value = total / static_cast<double>(batch.size());
  return loss;
}

ag::Var input_gradient_var(const TaskModel& model, const AnnotatedExample& example,
                           ObjectiveKind objective) {
  const auto input = model.prepare(example);
  const auto x = model.embed(input);
  if (!x.requires_grad()) throw UnsupportedError("input gradient requested with recording disabled");
  auto j = model.gold_log_prob_from(model.head(model.encode_embeddings(x), input), input, example.output);
  if (objective == ObjectiveKind::kTaskLoss) j = ag::neg(j);
  const std::vector<ag::Var> wrt{x};
  const auto g = ag::grad(j, wrt, /*create_graph=*/ag::grad_enabled())[0];
  return ag::gather_rows(g, input.token_rows);
}

ag::Matrix input_gradient(const TaskModel& model, const AnnotatedExample& example,
                          ObjectiveKind objective) {
  const auto input = model.prepare(example);
  const auto x = model.embed(input);
  if (!x.requires_grad()) throw UnsupportedError("input gradient requested with recording disabled");
  auto j = model.gold_log_prob_from(model.head(model.encode_embeddings(x), input), input, example.output);
  if (objective == ObjectiveKind::kTaskLoss) j = ag::neg(j);
  const std::vector<ag::Var> wrt{x};
  const auto g = ag::grad(j, wrt)[0].value();
  ag::Matrix out(static_cast<Eigen::Index>(input.token_rows.size()), g.cols());
  for (std::size_t i = 0; i < input.token_rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = g.row(input.token_rows[i]);
  }
  return out;
}

ag::Var encode_var(const TaskModel& model, const ModelInput& input) {
  return ag::gather_rows(model.encode_embeddings(model.embed(input)), input.token_rows);
}

ag::Matrix encode(const TaskModel& model, std::span<const std::string> tokens,
                  std::optional<std::size_t> pair_boundary) {
  ag::NoGradGuard guard;
  return encode_var(model, model.prepare(tokens, pair_boundary)).value();
}

std::uint64_t parameter_checksum(std::span<const ag::Var> params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params) {
    const auto& m = p.value();
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      std::uint64_t bits;
      const double v = m(i);
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffU;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr int kCheckpointVersion = 1;

json matrix_to_json(const ag::Matrix& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

ag::Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ValidationError("checkpoint matrix size");
  ag::Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  }
  return m;
}

}  // namespace

void save_model(const TaskModel& model, const std::filesystem::path& path) {
  json doc;
  doc["format"] = "uimer-task-model";
  doc["version"] = kCheckpointVersion;
  doc["architecture"] = {{"kind", to_string(model.kind())},
                         {"encoder", "birnn-tanh"},
                         {"embed_dim", model.config_.embed_dim},
                         {"hidden_dim", model.config_.hidden_dim},
                         {"labels", model.labels_},
                         {"vocabulary", model.content_tokens()}};
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) doc["parameters"][names[i]] = matrix_to_json(params[i].value());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << doc.dump() << '\n';
}

TaskModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  try {
    const auto doc = json::parse(in);
    if (doc.at("format") != "uimer-task-model" || doc.at("version") != kCheckpointVersion) {
      throw ValidationError("unsupported checkpoint format in " + path.string());
    }
    const auto& arch = doc.at("architecture");
    ModelConfig config;
    config.kind = task_kind_from_string(arch.at("kind").get<std::string>());
    config.embed_dim = arch.at("embed_dim").get<int>();
    config.hidden_dim = arch.at("hidden_dim").get<int>();
    const auto vocab = arch.at("vocabulary").get<std::vector<std::string>>();
    TaskModel model(config, vocab, arch.at("labels").get<std::vector<std::string>>(), 0);
    const auto names = model.parameter_names();
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto m = matrix_from_json(doc.at("parameters").at(names[i]));
      if (m.rows() != params[i].rows() || m.cols() != params[i].cols()) {
        throw ValidationError("checkpoint parameter " + names[i] + " has the wrong shape");
      }
      params[i].mutable_value() = std::move(m);
    }
    return model;
  } catch (const json::exception& e) {
    throw ValidationError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Optimization

AdamW::AdamW(std::vector<ag::Var> params, Options options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.push_back(ag::Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(ag::Matrix::Zero(p.rows(), p.cols()));
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void AdamW::step(double lr_factor) {
  ++step_count_;
  const double lr = options_.lr * lr_factor;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const auto& g = p.grad();
    if (g.size() == 0) continue;
    m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * g;
    v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * g.cwiseProduct(g);
    auto& w = p.mutable_value();
    w -= lr * options_.weight_decay * w;
    w.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + options_.eps);
  }
}

double linear_warmup_factor(long step, long warmup_steps, long total_steps) {
  if (step < warmup_steps) return static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return 1.0;
  return std::max(0.0, static_cast<double>(total_steps - step) /
                           static_cast<double>(total_steps - warmup_steps));
}

}  // namespace uimer
