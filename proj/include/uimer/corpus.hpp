#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace uimer {

// Class label for classification and pair tasks, or one tag per token for
// sequence labeling.
using Output = std::variant<std::string, std::vector<std::string>>;

inline constexpr std::string_view kNullTag = "O";

struct AnnotatedExample {
  std::vector<std::string> tokens;
  Output output;
  std::vector<int> rationale_mask;
  // Index of the first hypothesis token for sentence-pair tasks.
  std::optional<std::size_t> pair_boundary;

  bool is_labeling() const { return std::holds_alternative<std::vector<std::string>>(output); }
  const std::string& label() const;
  const std::vector<std::string>& tags() const;
  std::size_t rationale_count() const;

  // Throws ValidationError when an invariant is broken.
  void validate() const;

  friend bool operator==(const AnnotatedExample&, const AnnotatedExample&) = default;
};

// Splits on whitespace and isolates ASCII punctuation other than hyphens and
// apostrophes, which stay inside words.
std::vector<std::string> tokenize(std::string_view text);

std::string to_lower(std::string_view s);

class Vocabulary {
 public:
  // Returns the id of `token`, inserting it when new.
  int add(const std::string& token);
  std::optional<int> find(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.contains(token); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct Corpus {
  std::vector<AnnotatedExample> examples;
  Vocabulary vocabulary;  // first-occurrence order
  std::unordered_map<std::string, std::int64_t> token_counts;
  std::int64_t corpus_size = 0;

  static Corpus from_examples(std::vector<AnnotatedExample> examples);

  bool empty() const { return examples.empty(); }
  std::size_t size() const { return examples.size(); }
  // True when outputs are tag sequences.
  bool is_labeling() const;
  // Class labels, or the distinct non-null tags, sorted.
  std::vector<std::string> labels() const;

  friend bool operator==(const Corpus& a, const Corpus& b) { return a.examples == b.examples; }
};

// A pattern whose capture groups named rationale* mark rationale tokens.
// Accepts Python-style (?P<name>...) groups.
class RationalePattern {
 public:
  explicit RationalePattern(std::string source);

  const std::string& source() const { return source_; }
  // Character spans of the rationale groups over all non-overlapping matches.
  std::vector<std::pair<std::size_t, std::size_t>> rationale_spans(const std::string& text) const;
  std::size_t rationale_group_count() const { return rationale_groups_.size(); }

 private:
  std::string source_;
  std::regex regex_;
  std::vector<std::size_t> rationale_groups_;
};

enum class PatternPolicy {
  kUnion,       // every matching pattern contributes
  kFirstMatch,  // only the first matching pattern in list order contributes
};

struct RationaleSource {
  enum class Kind { kKeywordMap, kRegexSet, kProvided };

  Kind kind = Kind::kProvided;
  // Keys are labels; keyword sets are stored lowercased.
  std::map<std::string, std::set<std::string>> keyword_map;
  std::vector<RationalePattern> patterns;
  PatternPolicy policy = PatternPolicy::kUnion;

  static RationaleSource keywords(std::map<std::string, std::set<std::string>> map);
  static RationaleSource regexes(std::span<const std::string> patterns,
                                 PatternPolicy policy = PatternPolicy::kUnion);
  static RationaleSource provided();

  // Throws ConfigError when keyword keys miss a corpus label.
  void check_covers(const Corpus& corpus) const;
};

RationaleSource load_rationale_source(const std::filesystem::path& path);
void save_rationale_source(const RationaleSource& source, const std::filesystem::path& path);

// Marks rationale tokens of `base` according to `source`. For provided
// sources the mask already in `base` is validated and kept verbatim.
AnnotatedExample annotate(const AnnotatedExample& base, const RationaleSource& source);
AnnotatedExample annotate(std::vector<std::string> tokens, Output output,
                          const RationaleSource& source);
Corpus annotate_corpus(const Corpus& corpus, const RationaleSource& source);

// n-shot subset: exactly n examples per class, or a greedy cover in which
// every slot label occurs at least n times.
Corpus sample_n_shot(const Corpus& corpus, int n, std::uint64_t seed);

// Number of spans per slot label in a tag sequence.
std::map<std::string, int> count_slot_spans(std::span<const std::string> tags);

Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
// One JSON record per line; parse errors report 1-based line numbers.
Corpus parse_corpus(std::string_view text);
std::string serialize_corpus(const Corpus& corpus);

}  // namespace uimer
