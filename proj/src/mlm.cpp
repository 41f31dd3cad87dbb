#include "uimer/mlm.hpp"

#include <algorithm>
#include <cmath>

#include "uimer/errors.hpp"
#include "uimer/random.hpp"
#include "uimer/taskmodel.hpp"

namespace uimer {
namespace {

const std::string kBoundary = "<s>";

std::vector<FillCandidate> ranked(std::vector<FillCandidate> c) {
  std::sort(c.begin(), c.end(), [](const FillCandidate& a, const FillCandidate& b) {
    return a.probability != b.probability ? a.probability > b.probability : a.token < b.token;
  });
  return c;
}

const std::string& at_or_boundary(std::span<const std::string> tokens, long i) {
  if (i < 0 || i >= static_cast<long>(tokens.size())) return kBoundary;
  return tokens[static_cast<std::size_t>(i)];
}

}  // namespace

CountContextModel::CountContextModel(const Corpus& corpus) : vocab_(corpus.vocabulary.tokens()) {
  if (vocab_.empty()) throw ValidationError("count context model needs a non-empty corpus");
  for (const auto& ex : corpus.examples) {
    const std::span<const std::string> toks(ex.tokens);
    for (long i = 0; i < static_cast<long>(toks.size()); ++i) {
      const auto& u = toks[static_cast<std::size_t>(i)];
      const auto& l = at_or_boundary(toks, i - 1);
      const auto& r = at_or_boundary(toks, i + 1);
      unigram_[u] += 1.0;
      left_[{l, u}] += 1.0;
      right_[{u, r}] += 1.0;
      both_[{l, u, r}] += 1.0;
      total_ += 1.0;
    }
  }
}

std::vector<FillCandidate> CountContextModel::fill(std::span<const std::string> tokens,
                                                   std::size_t position) const {
  if (position >= tokens.size()) throw ValidationError("fill position out of range");
  const auto& l = at_or_boundary(tokens, static_cast<long>(position) - 1);
  const auto& r = at_or_boundary(tokens, static_cast<long>(position) + 1);
  auto get = [](const auto& map, const auto& key) {
    auto it = map.find(key);
    return it == map.end() ? 0.0 : it->second;
  };
  std::vector<FillCandidate> out;
  double z = 0.0;
  for (const auto& u : vocab_) {
    // Trigram evidence dominates, bigrams next, the unigram prior keeps every
    // token reachable.
    const double score = 4.0 * get(both_, std::tuple{l, u, r}) + get(left_, std::pair{l, u}) +
                         get(right_, std::pair{u, r}) + 0.1 * get(unigram_, u) / total_ + 1e-3;
    out.push_back({u, score});
    z += score;
  }
  for (auto& c : out) c.probability /= z;
  return ranked(std::move(out));
}

TinyMaskedLM::TinyMaskedLM(const Corpus& corpus, Options options) : options_(options) {
  vocab_.add(kBoundary);
  for (const auto& tok : corpus.vocabulary.tokens()) vocab_.add(tok);
  Rng rng(options_.seed);
  const auto v = static_cast<Eigen::Index>(vocab_.size());
  ag::Matrix emb(v, options_.embed_dim);
  for (Eigen::Index i = 0; i < emb.size(); ++i) emb(i) = 0.1 * rng.normal();
  ag::Matrix w(options_.embed_dim, v);
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = 0.1 * rng.normal();
  embedding_ = ag::parameter(std::move(emb));
  out_w_ = ag::parameter(std::move(w));
  out_b_ = ag::parameter(ag::Matrix::Zero(1, v));

  std::vector<std::pair<std::size_t, std::size_t>> sites;
  for (std::size_t e = 0; e < corpus.size(); ++e) {
    for (std::size_t i = 0; i < corpus.examples[e].tokens.size(); ++i) sites.emplace_back(e, i);
  }
  AdamW opt({embedding_, out_w_, out_b_}, {.lr = options_.lr, .weight_decay = 0.0});
  constexpr std::size_t kBatch = 32;
  for (int epoch = 0; epoch < options_.epochs; ++epoch) {
    rng.shuffle(std::span(sites));
    for (std::size_t start = 0; start < sites.size(); start += kBatch) {
      opt.zero_grad();
      const auto end = std::min(sites.size(), start + kBatch);
      ag::Var total = ag::scalar(0.0);
      for (auto s = start; s < end; ++s) {
        const auto& ex = corpus.examples[sites[s].first];
        const auto pos = sites[s].second;
        const int target = *vocab_.find(ex.tokens[pos]);
        const int col[1] = {target};
        total = ag::sub(total, ag::gather_cols(ag::log_softmax_rows(logits(ex.tokens, pos)), col));
      }
      ag::backward(ag::scale(total, 1.0 / static_cast<double>(end - start)));
      opt.step();
    }
  }
}

ag::Var TinyMaskedLM::logits(std::span<const std::string> tokens, std::size_t position) const {
  std::vector<int> ids;
  for (int off = -options_.window; off <= options_.window; ++off) {
    if (off == 0) continue;
    const auto& tok = at_or_boundary(tokens, static_cast<long>(position) + off);
    ids.push_back(vocab_.find(tok).value_or(0));
  }
  const auto ctx = ag::scale(ag::sum_rows(ag::gather_rows(embedding_, ids)), 1.0 / static_cast<double>(ids.size()));
  return ag::add(ag::matmul(ctx, out_w_), out_b_);
}

std::vector<FillCandidate> TinyMaskedLM::fill(std::span<const std::string> tokens, std::size_t position) const {
  if (position >= tokens.size()) throw ValidationError("fill position out of range");
  ag::NoGradGuard guard;
  const auto lp = ag::log_softmax_rows(logits(tokens, position)).value();
  std::vector<FillCandidate> out;
  for (std::size_t id = 1; id < vocab_.size(); ++id) {
    out.push_back({vocab_.token(static_cast<int>(id)), std::exp(lp(0, static_cast<Eigen::Index>(id)))});
  }
  // Boundary mass is dropped; renormalize over real tokens.
  double z = 0.0;
  for (const auto& c : out) z += c.probability;
  for (auto& c : out) c.probability /= z;
  return ranked(std::move(out));
}

double TinyMaskedLM::loss(const Corpus& corpus) const {
  ag::NoGradGuard guard;
  double total = 0.0;
  long n = 0;
  for (const auto& ex : corpus.examples) {
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
      const auto lp = ag::log_softmax_rows(logits(ex.tokens, i)).value();
      total -= lp(0, vocab_.find(ex.tokens[i]).value_or(0));
      ++n;
    }
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

}  // namespace uimer
