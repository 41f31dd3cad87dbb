#pragma once

// Small task models and examples shared by the unit and acceptance tests,
// plus a loop-based forward pass that serves as an independent oracle.

#include <cmath>
#include <string>
#include <vector>

#include "uimer/corpus.hpp"
#include "uimer/random.hpp"
#include "uimer/taskmodel.hpp"

namespace uimer::testing {

inline std::vector<std::string> fixture_vocabulary() {
  return {"add", "play", "song", "to", "the", "my", "list", "jazz", "now", "red", "blue", "green"};
}

inline AnnotatedExample make_example(std::vector<std::string> tokens, Output output, std::vector<int> mask,
                                     std::optional<std::size_t> boundary = std::nullopt) {
  AnnotatedExample ex;
  ex.tokens = std::move(tokens);
  ex.output = std::move(output);
  ex.rationale_mask = std::move(mask);
  ex.pair_boundary = boundary;
  return ex;
}

inline TaskModel fixture_model(TaskKind kind, std::uint64_t seed, int embed_dim = 6, int hidden_dim = 4) {
  ModelConfig config;
  config.kind = kind;
  config.embed_dim = embed_dim;
  config.hidden_dim = hidden_dim;
  const auto vocab = fixture_vocabulary();
  std::vector<std::string> labels;
  if (kind == TaskKind::kSequenceLabeling) {
    labels = {"O", "ITEM", "LIST"};
  } else if (kind == TaskKind::kPairClassification) {
    labels = {"entail", "neutral", "contradict"};
  } else {
    labels = {"AddToPlaylist", "PlayMusic", "Other"};
  }
  TaskModel model(config, vocab, labels, seed);
  // Non-zero biases so no parameter sits at a special value.
  Rng rng(seed ^ 0xabcdefULL);
  for (auto& p : model.parameters()) {
    if (p.rows() == 1) {
      for (Eigen::Index i = 0; i < p.value().size(); ++i) p.mutable_value()(i) = rng.uniform(-0.3, 0.3);
    }
  }
  return model;
}

inline AnnotatedExample fixture_example(TaskKind kind) {
  switch (kind) {
    case TaskKind::kSequenceLabeling:
      return make_example({"add", "jazz", "to", "my", "list"}, std::vector<std::string>{"O", "ITEM", "O", "O", "LIST"},
                          {1, 0, 1, 0, 1});
    case TaskKind::kPairClassification:
      return make_example({"play", "red", "song", "the", "blue", "song"}, std::string("contradict"),
                          {0, 1, 0, 0, 1, 0}, 3);
    case TaskKind::kSingleClassification:
      break;
  }
  return make_example({"add", "the", "song", "to", "my", "list"}, std::string("AddToPlaylist"), {1, 0, 0, 0, 0, 1});
}

// Loop-based forward pass over plain doubles, written without the autodiff
// library. Returns per-row probabilities (1 row, or one per token).
inline std::vector<std::vector<double>> reference_forward(const TaskModel& model, const AnnotatedExample& ex) {
  const auto params = model.parameters();
  const auto& emb = params[0].value();
  const int h = model.config().hidden_dim;
  const int d = model.config().embed_dim;
  std::vector<int> ids;
  std::vector<int> token_rows;
  for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
    if (ex.pair_boundary && i == *ex.pair_boundary) ids.push_back(2);
    token_rows.push_back(static_cast<int>(ids.size()));
    ids.push_back(model.vocabulary().find(ex.tokens[i]).value_or(0));
  }
  const int n = static_cast<int>(ids.size());
  auto run = [&](int w_in, int w_rec, int bias, bool reverse) {
    std::vector<std::vector<double>> states(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(h)));
    std::vector<double> prev(static_cast<std::size_t>(h), 0.0);
    for (int k = 0; k < n; ++k) {
      const int t = reverse ? n - 1 - k : k;
      for (int j = 0; j < h; ++j) {
        double s = params[static_cast<std::size_t>(bias)].value()(0, j);
        for (int q = 0; q < d; ++q) s += emb(ids[static_cast<std::size_t>(t)], q) * params[static_cast<std::size_t>(w_in)].value()(q, j);
        if (k > 0) {
          for (int q = 0; q < h; ++q) s += prev[static_cast<std::size_t>(q)] * params[static_cast<std::size_t>(w_rec)].value()(q, j);
        }
        states[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] = std::tanh(s);
      }
      prev = states[static_cast<std::size_t>(t)];
    }
    return states;
  };
  const auto fwd = run(1, 2, 3, false);
  const auto bwd = run(4, 5, 6, true);
  const auto& w = params[7].value();
  const auto& b = params[8].value();
  const int labels = static_cast<int>(w.cols());
  auto classify = [&](const std::vector<double>& feat) {
    std::vector<double> logits(static_cast<std::size_t>(labels));
    double mx = -1e300;
    for (int c = 0; c < labels; ++c) {
      double s = b(0, c);
      for (int q = 0; q < 2 * h; ++q) s += feat[static_cast<std::size_t>(q)] * w(q, c);
      logits[static_cast<std::size_t>(c)] = s;
      mx = std::max(mx, s);
    }
    double z = 0.0;
    for (auto& l : logits) z += std::exp(l - mx);
    for (auto& l : logits) l = std::exp(l - mx) / z;
    return logits;
  };
  auto feature = [&](int t) {
    std::vector<double> f(fwd[static_cast<std::size_t>(t)]);
    f.insert(f.end(), bwd[static_cast<std::size_t>(t)].begin(), bwd[static_cast<std::size_t>(t)].end());
    return f;
  };
  std::vector<std::vector<double>> out;
  if (model.kind() == TaskKind::kSequenceLabeling) {
    for (int r : token_rows) out.push_back(classify(feature(r)));
  } else {
    std::vector<double> pooled(static_cast<std::size_t>(2 * h), 0.0);
    for (int t = 0; t < n; ++t) {
      const auto f = feature(t);
      for (int q = 0; q < 2 * h; ++q) pooled[static_cast<std::size_t>(q)] += f[static_cast<std::size_t>(q)] / n;
    }
    out.push_back(classify(pooled));
  }
  return out;
}

inline double reference_gold_probability(const TaskModel& model, const AnnotatedExample& ex) {
  const auto rows = reference_forward(model, ex);
  if (model.kind() == TaskKind::kSequenceLabeling) {
    double p = 1.0;
    for (std::size_t t = 0; t < rows.size(); ++t) p *= rows[t][static_cast<std::size_t>(model.label_id(ex.tags()[t]))];
    return p;
  }
  return rows[0][static_cast<std::size_t>(model.label_id(ex.label()))];
}

}  // namespace uimer::testing
