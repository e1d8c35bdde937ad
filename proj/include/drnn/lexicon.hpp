#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace drnn {

enum class Number { sg, pl };

std::string_view to_string(Number n);
Number parse_number(std::string_view s);
inline Number flip(Number n) { return n == Number::sg ? Number::pl : Number::sg; }

class LexiconError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LexicalEntry {
  std::string lemma;
  std::string category;
  std::string singular;
  std::string plural;
  /// Unset for categories where animacy does not apply.
  std::optional<bool> animate;

  const std::string& form(Number n) const { return n == Number::sg ? singular : plural; }
};

/// What a surface form tells us: its entry and, when the singular and plural
/// forms differ, its grammatical number.
struct FormInfo {
  const LexicalEntry* entry = nullptr;
  std::optional<Number> number;
};

/// Categories whose singular and plural forms must differ.
bool is_number_bearing(std::string_view category);

/// Lemma table. File format is TSV, one entry per line:
///
///   lemma  category  singular  plural  animacy(anim|inanim|-)
///
/// Blank lines and lines starting with '#' are ignored.
class Lexicon {
 public:
  Lexicon() = default;

  static Lexicon parse(std::istream& in, const std::string& source = "<stream>");
  static Lexicon load(const std::filesystem::path& path);

  void add(LexicalEntry entry);

  std::optional<FormInfo> lookup(std::string_view form) const;
  bool is_noun(std::string_view form) const;
  bool has_category(std::string_view category) const;
  /// Entries of a category, optionally restricted by animacy, in file order.
  std::vector<const LexicalEntry*> in_category(std::string_view category,
                                               std::optional<bool> animate = std::nullopt) const;

  std::size_t size() const { return entries_.size(); }
  const std::vector<LexicalEntry>& entries() const { return entries_; }

 private:
  std::vector<LexicalEntry> entries_;
  std::map<std::string, std::size_t, std::less<>> forms_;
};

}  // namespace drnn
