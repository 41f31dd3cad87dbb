#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "uimer/autograd.hpp"
#include "uimer/corpus.hpp"

namespace uimer {

struct FillCandidate {
  std::string token;
  double probability = 0.0;
};

// Conditional token model: distribution over fillers for one masked position.
// Implementations must allow concurrent const calls.
class ConditionalTokenModel {
 public:
  virtual ~ConditionalTokenModel() = default;
  // Candidates sorted by descending probability, ties broken by token.
  virtual std::vector<FillCandidate> fill(std::span<const std::string> tokens, std::size_t position) const = 0;
};

// Interpolated counts of (left, u, right), (left, u), (u, right) and u.
class CountContextModel : public ConditionalTokenModel {
 public:
  explicit CountContextModel(const Corpus& corpus);
  std::vector<FillCandidate> fill(std::span<const std::string> tokens, std::size_t position) const override;

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, double> unigram_;
  std::map<std::pair<std::string, std::string>, double> left_;
  std::map<std::pair<std::string, std::string>, double> right_;
  std::map<std::tuple<std::string, std::string, std::string>, double> both_;
  double total_ = 0.0;
};

// Masked LM over a +-2 token window: mean context embedding -> softmax.
class TinyMaskedLM : public ConditionalTokenModel {
 public:
  struct Options {
    int embed_dim = 16;
    int window = 2;
    int epochs = 30;
    double lr = 0.02;
    std::uint64_t seed = 0;
  };

  TinyMaskedLM(const Corpus& corpus, Options options);
  std::vector<FillCandidate> fill(std::span<const std::string> tokens, std::size_t position) const override;
  // Mean masked-token cross-entropy over the corpus.
  double loss(const Corpus& corpus) const;

 private:
  ag::Var logits(std::span<const std::string> tokens, std::size_t position) const;

  Options options_;
  Vocabulary vocab_;  // id 0 is the boundary/unknown symbol
  ag::Var embedding_, out_w_, out_b_;
};

}  // namespace uimer
