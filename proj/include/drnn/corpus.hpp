#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drnn/grammar.hpp"
#include "drnn/lexicon.hpp"

namespace drnn {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InterveningNoun {
  std::size_t index = 0;
  Number number = Number::sg;
  bool operator==(const InterveningNoun&) const = default;
};

struct AnnotatedSentence {
  std::vector<std::string> tokens;
  std::size_t subject_index = 0;
  std::size_t verb_index = 0;
  Number subject_number = Number::sg;
  Number verb_number = Number::sg;
  std::vector<InterveningNoun> intervening_nouns;
  std::size_t attractor_count = 0;
  std::size_t non_attractor_count = 0;
  std::size_t distance = 0;
  bool grammatical = true;
  std::string template_name;
  Phenomenon phenomenon = Phenomenon::sv_agreement;

  std::string text() const;
  bool operator==(const AnnotatedSentence&) const = default;
};

/// Counts nouns strictly between subject and verb; an intervening noun is an
/// attractor when its number differs from the subject's. Pronoun-like nouns
/// ("someone") count like any other noun.
AnnotatedSentence annotate(std::vector<std::string> tokens, std::size_t subject_index,
                           std::size_t verb_index, const Lexicon& lexicon);

/// Sentences are spread over templates as evenly as possible (earlier
/// templates take the remainder) and returned in template order. Each item is
/// grammatical with probability `grammatical_ratio`; ungrammatical agreement
/// items flip the designated target's number, ungrammatical NPI items drop the
/// licensor.
std::vector<AnnotatedSentence> generate(std::span<const GrammarTemplate> templates,
                                        const Lexicon& lexicon, std::uint64_t seed,
                                        std::size_t count, double grammatical_ratio);

/// Every distinct grammatical sentence of a template (its language is finite).
std::vector<AnnotatedSentence> enumerate_grammatical(const GrammarTemplate& tpl,
                                                     const Lexicon& lexicon);

enum class PairMember { grammatical, intrusive, ungrammatical };
std::string_view to_string(PairMember m);
PairMember parse_pair_member(std::string_view s);

/// Two sentences from one template item. The `preferred` member should score
/// higher. Agreement/reflexive pairs and every pair involving the
/// ungrammatical member differ in exactly one token; grammatical-vs-intrusive
/// NPI pairs differ in the two licensor positions.
struct MinimalPair {
  std::vector<std::string> preferred;
  std::vector<std::string> contrast;
  PairMember preferred_kind = PairMember::grammatical;
  PairMember contrast_kind = PairMember::ungrammatical;
  Phenomenon phenomenon = Phenomenon::sv_agreement;
  RangeTag range = RangeTag::short_range;
  std::string template_name;
  std::string label;

  std::vector<std::size_t> differing_positions() const;
  bool operator==(const MinimalPair&) const = default;
};

/// `count` template items spread like generate(); each agreement or reflexive
/// item yields one pair, each NPI item yields the three pairwise contrasts.
std::vector<MinimalPair> generate_minimal_pairs(std::span<const GrammarTemplate> templates,
                                                const Lexicon& lexicon, std::uint64_t seed,
                                                std::size_t count);

struct CorpusSplit {
  std::vector<AnnotatedSentence> train;
  std::vector<AnnotatedSentence> valid;
  std::vector<AnnotatedSentence> test;
};

/// Sizes are round(n * fraction); the remainder is the test part. Each part
/// keeps the corpus's original order.
CorpusSplit split(const std::vector<AnnotatedSentence>& corpus, double train_fraction,
                  double valid_fraction, std::uint64_t seed);

// TSV columns: tokens, subject_index, verb_index, subject_number, verb_number,
// attractors, non_attractors, distance, grammatical, template, phenomenon.
// The first line is a header naming the columns.
void write_corpus_tsv(std::ostream& os, const std::vector<AnnotatedSentence>& corpus);
/// With a lexicon, the intervening-noun list is rebuilt and checked against the
/// stored counts.
std::vector<AnnotatedSentence> read_corpus_tsv(std::istream& is, const Lexicon* lexicon = nullptr,
                                               const std::string& source = "<stream>");
void save_corpus(const std::filesystem::path& path, const std::vector<AnnotatedSentence>& corpus);
std::vector<AnnotatedSentence> load_corpus(const std::filesystem::path& path,
                                           const Lexicon* lexicon = nullptr);

// TSV columns: preferred, contrast, preferred_kind, contrast_kind, phenomenon,
// range, template, label.
void write_pairs_tsv(std::ostream& os, const std::vector<MinimalPair>& pairs);
std::vector<MinimalPair> read_pairs_tsv(std::istream& is, const std::string& source = "<stream>");
void save_pairs(const std::filesystem::path& path, const std::vector<MinimalPair>& pairs);
std::vector<MinimalPair> load_pairs(const std::filesystem::path& path);

std::vector<std::string> tokenize(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace drnn
