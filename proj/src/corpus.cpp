#include "uimer/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "uimer/errors.hpp"
#include "uimer/random.hpp"

namespace uimer {

using nlohmann::json;

const std::string& AnnotatedExample::label() const {
  if (const auto* s = std::get_if<std::string>(&output)) return *s;
  throw ValidationError("example output is a tag sequence, not a label");
}

const std::vector<std::string>& AnnotatedExample::tags() const {
  if (const auto* t = std::get_if<std::vector<std::string>>(&output)) return *t;
  throw ValidationError("example output is a label, not a tag sequence");
}

std::size_t AnnotatedExample::rationale_count() const {
  return static_cast<std::size_t>(std::count(rationale_mask.begin(), rationale_mask.end(), 1));
}

void AnnotatedExample::validate() const {
  if (rationale_mask.size() != tokens.size()) {
    throw ValidationError("rationale_mask has " + std::to_string(rationale_mask.size()) +
                          " entries for " + std::to_string(tokens.size()) + " tokens");
  }
  for (int g : rationale_mask) {
    if (g != 0 && g != 1) throw ValidationError("rationale_mask values must be 0 or 1");
  }
  if (is_labeling() && tags().size() != tokens.size()) {
    throw ValidationError("tag sequence length differs from token count");
  }
  if (pair_boundary && (*pair_boundary == 0 || *pair_boundary >= tokens.size())) {
    throw ValidationError("pair_boundary must split tokens into two non-empty parts");
  }
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isspace(u)) {
      flush();
    } else if (u < 0x80 && std::ispunct(u) && c != '-' && c != '\'') {
      flush();
      out.emplace_back(1, c);
    } else {
      current.push_back(c);
    }
  }
  flush();
  return out;
}

int Vocabulary::add(const std::string& token) {
  auto [it, inserted] = ids_.try_emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::optional<int> Vocabulary::find(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

Corpus Corpus::from_examples(std::vector<AnnotatedExample> examples) {
  Corpus corpus;
  corpus.examples = std::move(examples);
  for (const auto& ex : corpus.examples) {
    for (const auto& tok : ex.tokens) {
      corpus.vocabulary.add(tok);
      ++corpus.token_counts[tok];
      ++corpus.corpus_size;
    }
  }
  return corpus;
}

bool Corpus::is_labeling() const { return !examples.empty() && examples.front().is_labeling(); }

std::vector<std::string> Corpus::labels() const {
  std::set<std::string> seen;
  for (const auto& ex : examples) {
    if (ex.is_labeling()) {
      for (const auto& [label, _] : count_slot_spans(ex.tags())) seen.insert(label);
    } else {
      seen.insert(ex.label());
    }
  }
  return {seen.begin(), seen.end()};
}

// ---------------------------------------------------------------------------
// Patterns

namespace {

struct TranslatedPattern {
  std::string ecma;
  std::vector<std::size_t> rationale_groups;
};

// Rewrites (?P<name>...) into plain groups while numbering capture groups.
// Rationale groups are anchored on word boundaries so they only ever cover
// whole tokens.
TranslatedPattern translate_pattern(const std::string& src) {
  TranslatedPattern out;
  std::size_t group = 0;
  std::vector<bool> open_rationale;
  bool in_class = false;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const char c = src[i];
    if (c == '\\' && i + 1 < src.size()) {
      out.ecma += src.substr(i, 2);
      ++i;
      continue;
    }
    if (in_class) {
      if (c == ']') in_class = false;
      out.ecma += c;
      continue;
    }
    if (c == '[') {
      in_class = true;
      out.ecma += c;
    } else if (c == ')') {
      if (open_rationale.empty()) throw ConfigError("unbalanced parenthesis in: " + src);
      out.ecma += open_rationale.back() ? ")\\b)" : ")";
      open_rationale.pop_back();
    } else if (c != '(') {
      out.ecma += c;
    } else if (src.compare(i, 4, "(?P<") == 0) {
      const auto close = src.find('>', i + 4);
      if (close == std::string::npos) throw ConfigError("unterminated group name in: " + src);
      const bool rationale = src.compare(i + 4, 9, "rationale") == 0;
      ++group;
      if (rationale) out.rationale_groups.push_back(group);
      open_rationale.push_back(rationale);
      out.ecma += rationale ? "(\\b(?:" : "(";
      i = close;
    } else {
      if (i + 1 >= src.size() || src[i + 1] != '?') ++group;
      open_rationale.push_back(false);
      out.ecma += c;
    }
  }
  if (!open_rationale.empty()) throw ConfigError("unbalanced parenthesis in: " + src);
  return out;
}

}  // namespace

RationalePattern::RationalePattern(std::string source) : source_(std::move(source)) {
  auto translated = translate_pattern(source_);
  if (translated.rationale_groups.empty()) {
    throw ConfigError("pattern has no rationale group: " + source_);
  }
  try {
    regex_ = std::regex(translated.ecma, std::regex::ECMAScript | std::regex::icase);
  } catch (const std::regex_error& e) {
    throw ConfigError("pattern does not compile: " + source_ + " (" + e.what() + ")");
  }
  rationale_groups_ = std::move(translated.rationale_groups);
}

std::vector<std::pair<std::size_t, std::size_t>> RationalePattern::rationale_spans(
    const std::string& text) const {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (std::sregex_iterator it(text.begin(), text.end(), regex_), end; it != end; ++it) {
    const auto& m = *it;
    for (auto g : rationale_groups_) {
      if (!m[g].matched || m.length(g) == 0) continue;
      const auto begin = static_cast<std::size_t>(m.position(g));
      spans.emplace_back(begin, begin + static_cast<std::size_t>(m.length(g)));
    }
  }
  return spans;
}

RationaleSource RationaleSource::keywords(std::map<std::string, std::set<std::string>> map) {
  RationaleSource s;
  s.kind = Kind::kKeywordMap;
  for (auto& [label, words] : map) {
    std::set<std::string> lowered;
    for (const auto& w : words) lowered.insert(to_lower(w));
    s.keyword_map.emplace(label, std::move(lowered));
  }
  return s;
}

RationaleSource RationaleSource::regexes(std::span<const std::string> patterns,
                                         PatternPolicy policy) {
  RationaleSource s;
  s.kind = Kind::kRegexSet;
  s.policy = policy;
  for (const auto& p : patterns) s.patterns.emplace_back(p);
  return s;
}

RationaleSource RationaleSource::provided() { return {}; }

void RationaleSource::check_covers(const Corpus& corpus) const {
  if (kind != Kind::kKeywordMap) return;
  for (const auto& label : corpus.labels()) {
    if (!keyword_map.contains(label)) throw ConfigError("keyword map has no entry for label " + label);
  }
}

RationaleSource load_rationale_source(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open rationale source " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("rationale source " + path.string() + ": " + e.what());
  }
  try {
    if (doc.contains("keywords")) {
      std::map<std::string, std::set<std::string>> map;
      for (const auto& [label, words] : doc.at("keywords").items()) {
        map[label] = words.get<std::set<std::string>>();
      }
      return RationaleSource::keywords(std::move(map));
    }
    if (doc.contains("patterns")) {
      const auto patterns = doc.at("patterns").get<std::vector<std::string>>();
      const auto policy_name = doc.value("policy", std::string("union"));
      PatternPolicy policy;
      if (policy_name == "union") {
        policy = PatternPolicy::kUnion;
      } else if (policy_name == "first_match") {
        policy = PatternPolicy::kFirstMatch;
      } else {
        throw ConfigError("unknown pattern policy " + policy_name);
      }
      return RationaleSource::regexes(patterns, policy);
    }
    if (doc.value("provided", false)) return RationaleSource::provided();
  } catch (const json::exception& e) {
    throw ConfigError("rationale source " + path.string() + ": " + e.what());
  }
  throw ConfigError("rationale source needs \"keywords\", \"patterns\" or \"provided\"");
}

void save_rationale_source(const RationaleSource& source, const std::filesystem::path& path) {
  json doc;
  switch (source.kind) {
    case RationaleSource::Kind::kKeywordMap:
      for (const auto& [label, words] : source.keyword_map) doc["keywords"][label] = words;
      break;
    case RationaleSource::Kind::kRegexSet: {
      auto& list = doc["patterns"] = json::array();
      for (const auto& p : source.patterns) list.push_back(p.source());
      doc["policy"] = source.policy == PatternPolicy::kUnion ? "union" : "first_match";
      break;
    }
    case RationaleSource::Kind::kProvided:
      doc["provided"] = true;
      break;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Annotation

namespace {

std::vector<int> regex_mask(const std::vector<std::string>& tokens, const RationaleSource& source) {
  std::string text;
  std::vector<std::pair<std::size_t, std::size_t>> bounds;
  for (const auto& tok : tokens) {
    if (!text.empty()) text += ' ';
    bounds.emplace_back(text.size(), text.size() + tok.size());
    text += tok;
  }
  std::vector<int> mask(tokens.size(), 0);
  for (const auto& pattern : source.patterns) {
    const auto spans = pattern.rationale_spans(text);
    bool matched_any = false;
    for (const auto& [b, e] : spans) {
      for (std::size_t t = 0; t < bounds.size(); ++t) {
        if (bounds[t].first < e && b < bounds[t].second) {
          mask[t] = 1;
          matched_any = true;
        }
      }
    }
    if (matched_any && source.policy == PatternPolicy::kFirstMatch) break;
  }
  return mask;
}

}  // namespace

AnnotatedExample annotate(const AnnotatedExample& base, const RationaleSource& source) {
  if (base.tokens.empty()) throw ValidationError("cannot annotate an empty token sequence");
  AnnotatedExample out = base;
  switch (source.kind) {
    case RationaleSource::Kind::kProvided:
      out.validate();
      return out;
    case RationaleSource::Kind::kKeywordMap: {
      if (base.is_labeling()) throw AnnotationError("keyword maps need a class label");
      auto it = source.keyword_map.find(base.label());
      if (it == source.keyword_map.end()) {
        throw AnnotationError("no keywords for label " + base.label());
      }
      out.rationale_mask.assign(base.tokens.size(), 0);
      for (std::size_t i = 0; i < base.tokens.size(); ++i) {
        if (it->second.contains(to_lower(base.tokens[i]))) out.rationale_mask[i] = 1;
      }
      break;
    }
    case RationaleSource::Kind::kRegexSet:
      out.rationale_mask = regex_mask(base.tokens, source);
      break;
  }
  out.validate();
  return out;
}

AnnotatedExample annotate(std::vector<std::string> tokens, Output output,
                          const RationaleSource& source) {
  AnnotatedExample base;
  base.rationale_mask.assign(tokens.size(), 0);
  base.tokens = std::move(tokens);
  base.output = std::move(output);
  return annotate(base, source);
}

Corpus annotate_corpus(const Corpus& corpus, const RationaleSource& source) {
  source.check_covers(corpus);
  std::vector<AnnotatedExample> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus.examples) out.push_back(annotate(ex, source));
  return Corpus::from_examples(std::move(out));
}

// ---------------------------------------------------------------------------
// n-shot sampling

std::map<std::string, int> count_slot_spans(std::span<const std::string> tags) {
  std::map<std::string, int> counts;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == kNullTag) continue;
    if (i == 0 || tags[i - 1] != tags[i]) ++counts[tags[i]];
  }
  return counts;
}

namespace {

Corpus sample_classification(const Corpus& corpus, int n, Rng& rng) {
  std::map<std::string, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_label[corpus.examples[i].label()].push_back(i);
  std::vector<std::size_t> chosen;
  for (auto& [label, idx] : by_label) {
    if (static_cast<int>(idx.size()) < n) {
      throw SamplingError("label " + label + " has only " + std::to_string(idx.size()) +
                              " examples, need " + std::to_string(n),
                          label);
    }
    rng.shuffle(std::span<std::size_t>(idx));
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + n);
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<AnnotatedExample> out;
  for (auto i : chosen) out.push_back(corpus.examples[i]);
  return Corpus::from_examples(std::move(out));
}

Corpus sample_labeling(const Corpus& corpus, int n, Rng& rng) {
  std::vector<std::map<std::string, int>> spans;
  std::map<std::string, int> available;
  for (const auto& ex : corpus.examples) {
    spans.push_back(count_slot_spans(ex.tags()));
    for (const auto& [label, c] : spans.back()) available[label] += c;
  }
  for (const auto& [label, c] : available) {
    if (c < n) {
      throw SamplingError("slot label " + label + " occurs " + std::to_string(c) +
                              " times, need " + std::to_string(n),
                          label);
    }
  }
  // Labels ordered rarest first; the seed fixes the example scan order.
  std::vector<std::string> order;
  for (const auto& [label, _] : available) order.push_back(label);
  std::stable_sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    return available[a] < available[b];
  });
  std::vector<std::size_t> scan(corpus.size());
  std::iota(scan.begin(), scan.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(scan));

  std::map<std::string, int> have;
  std::vector<bool> taken(corpus.size(), false);
  std::vector<std::size_t> chosen;
  for (const auto& label : order) {
    for (std::size_t pos = 0; pos < scan.size() && have[label] < n; ++pos) {
      const auto i = scan[pos];
      if (taken[i] || !spans[i].contains(label)) continue;
      taken[i] = true;
      chosen.push_back(i);
      for (const auto& [l, c] : spans[i]) have[l] += c;
    }
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<AnnotatedExample> out;
  for (auto i : chosen) out.push_back(corpus.examples[i]);
  return Corpus::from_examples(std::move(out));
}

}  // namespace

Corpus sample_n_shot(const Corpus& corpus, int n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("n-shot sampling needs n >= 1");
  Rng rng(seed);
  if (corpus.empty()) return corpus;
  return corpus.is_labeling() ? sample_labeling(corpus, n, rng) : sample_classification(corpus, n, rng);
}

// ---------------------------------------------------------------------------
// Persistence

Corpus parse_corpus(std::string_view text) {
  std::vector<AnnotatedExample> examples;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    try {
      const auto rec = json::parse(line);
      AnnotatedExample ex;
      ex.tokens = rec.at("tokens").get<std::vector<std::string>>();
      const auto& out = rec.at("output");
      if (out.is_string()) {
        ex.output = out.get<std::string>();
      } else {
        ex.output = out.get<std::vector<std::string>>();
      }
      if (rec.contains("rationale_mask")) {
        ex.rationale_mask = rec.at("rationale_mask").get<std::vector<int>>();
      } else {
        ex.rationale_mask.assign(ex.tokens.size(), 0);
      }
      if (rec.contains("pair_boundary") && !rec.at("pair_boundary").is_null()) {
        ex.pair_boundary = rec.at("pair_boundary").get<std::size_t>();
      }
      if (ex.tokens.empty()) throw ValidationError("record has no tokens");
      ex.validate();
      examples.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line_no);
    }
    if (end == text.size()) break;
  }
  return Corpus::from_examples(std::move(examples));
}

std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& ex : corpus.examples) {
    json rec;
    rec["tokens"] = ex.tokens;
    std::visit([&](const auto& o) { rec["output"] = o; }, ex.output);
    rec["rationale_mask"] = ex.rationale_mask;
    if (ex.pair_boundary) rec["pair_boundary"] = *ex.pair_boundary;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open corpus " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_corpus(ss.str());
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write corpus " + path.string());
  out << serialize_corpus(corpus);
}

}  // namespace uimer
