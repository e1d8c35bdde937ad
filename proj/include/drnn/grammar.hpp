#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "drnn/lexicon.hpp"

namespace drnn {

enum class Phenomenon { sv_agreement, reflexive, npi };
enum class RangeTag { short_range, long_range };

std::string_view to_string(Phenomenon p);
std::string_view to_string(RangeTag r);
Phenomenon parse_phenomenon(std::string_view s);
RangeTag parse_range(std::string_view s);

class GrammarError : public std::runtime_error {
 public:
  GrammarError(const std::string& source, std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Pseudo-category for NPI licensor positions; filled by the template's `npi`
/// directive rather than from the lexicon.
inline constexpr std::string_view kNpiCategory = "npi";

struct Symbol {
  enum class Kind { literal, nonterminal, category };
  Kind kind = Kind::literal;
  /// Word for literals, rule name for nonterminals, lexical category otherwise.
  std::string text;
  std::optional<Number> fixed_number;
  /// Symbols sharing a variable name share a randomly drawn number.
  std::string number_var;
  std::string slot;
  std::optional<bool> animate;
};

struct Production {
  std::string lhs;
  std::vector<std::vector<Symbol>> alternatives;
  std::size_t line = 0;
};

/// Target slot takes the number of the source slot in grammatical output.
struct AgreementLink {
  std::string source_slot;
  std::string target_slot;
};

struct NpiDirective {
  std::string licensor_slot;
  std::string intrusive_slot;
  std::string licensor_word = "no";
  std::string neutral_word = "the";
};

/// A non-recursive CFG for one construction. The first rule's LHS is the
/// start symbol; the first link is the designated subject-verb dependency.
struct GrammarTemplate {
  std::string name;
  Phenomenon phenomenon = Phenomenon::sv_agreement;
  RangeTag range = RangeTag::short_range;
  std::string label;
  std::vector<Production> rules;
  std::vector<AgreementLink> links;
  std::optional<NpiDirective> npi;

  const Production* rule(std::string_view lhs) const;
  const AgreementLink& designated_link() const { return links.at(0); }
};

/// Template file format:
///
///   # comment
///   template <name> <sv_agreement|reflexive|npi> <short|long>
///   label <free text>
///   S -> the @noun[anim=yes,slot=SUBJ] VP
///   VP -> @verb_intr[slot=VERB] | @verb_tr[slot=VERB] the @noun
///   link SUBJ VERB
///   npi LIC INTR [licensor] [neutral]
///   end
///
/// Capitalised identifiers are nonterminals, `@cat[k=v,...]` are lexical
/// terminals (features: num=sg|pl|<Var>, slot=<Name>, anim=yes|no), and any
/// other token is a literal word. When a lexicon is given, every category
/// must be populated in it.
std::vector<GrammarTemplate> parse_grammar(std::istream& in, const std::string& source = "<stream>",
                                           const Lexicon* lexicon = nullptr);
std::vector<GrammarTemplate> load_grammar(const std::filesystem::path& path,
                                          const Lexicon* lexicon = nullptr);

/// Throws GrammarError if a category used by `tpl` has no lexicon entries.
void check_categories(const GrammarTemplate& tpl, const Lexicon& lexicon);

}  // namespace drnn
