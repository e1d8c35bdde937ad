#include "drnn/lexicon.hpp"

#include <fstream>
#include <sstream>

namespace drnn {

std::string_view to_string(Number n) { return n == Number::sg ? "sg" : "pl"; }

Number parse_number(std::string_view s) {
  if (s == "sg") return Number::sg;
  if (s == "pl") return Number::pl;
  throw std::invalid_argument("unknown grammatical number '" + std::string(s) + "'");
}

bool is_number_bearing(std::string_view category) {
  return category == "noun" || category == "refl" || category.starts_with("verb") ||
         category.starts_with("aux");
}

void Lexicon::add(LexicalEntry entry) {
  if (entry.lemma.empty() || entry.category.empty() || entry.singular.empty() ||
      entry.plural.empty()) {
    throw LexiconError("lexical entry with an empty field");
  }
  if (is_number_bearing(entry.category) && entry.singular == entry.plural) {
    throw LexiconError("entry '" + entry.lemma + "' (" + entry.category +
                       ") needs distinct singular and plural forms");
  }
  for (const std::string* form : {&entry.singular, &entry.plural}) {
    auto it = forms_.find(*form);
    if (it != forms_.end() && entries_[it->second].category != entry.category) {
      throw LexiconError("form '" + *form + "' appears under categories '" +
                         entries_[it->second].category + "' and '" + entry.category + "'");
    }
  }
  const std::size_t index = entries_.size();
  forms_.emplace(entry.singular, index);
  forms_.emplace(entry.plural, index);
  entries_.push_back(std::move(entry));
}

Lexicon Lexicon::parse(std::istream& in, const std::string& source) {
  Lexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::istringstream fields(line);
    std::string col;
    while (std::getline(fields, col, '\t')) cols.push_back(col);
    if (cols.size() != 5) {
      throw LexiconError(source + ":" + std::to_string(lineno) + ": expected 5 tab-separated columns");
    }
    LexicalEntry e{cols[0], cols[1], cols[2], cols[3], std::nullopt};
    if (cols[4] == "anim") {
      e.animate = true;
    } else if (cols[4] == "inanim") {
      e.animate = false;
    } else if (cols[4] != "-") {
      throw LexiconError(source + ":" + std::to_string(lineno) + ": bad animacy '" + cols[4] + "'");
    }
    try {
      lex.add(std::move(e));
    } catch (const LexiconError& err) {
      throw LexiconError(source + ":" + std::to_string(lineno) + ": " + err.what());
    }
  }
  return lex;
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LexiconError("cannot open lexicon '" + path.string() + "'");
  return parse(in, path.string());
}

std::optional<FormInfo> Lexicon::lookup(std::string_view form) const {
  auto it = forms_.find(form);
  if (it == forms_.end()) return std::nullopt;
  const LexicalEntry& e = entries_[it->second];
  FormInfo info{&e, std::nullopt};
  if (e.singular != e.plural) info.number = form == e.singular ? Number::sg : Number::pl;
  return info;
}

bool Lexicon::is_noun(std::string_view form) const {
  auto info = lookup(form);
  return info && info->entry->category == "noun";
}

bool Lexicon::has_category(std::string_view category) const {
  for (const auto& e : entries_) {
    if (e.category == category) return true;
  }
  return false;
}

std::vector<const LexicalEntry*> Lexicon::in_category(std::string_view category,
                                                      std::optional<bool> animate) const {
  std::vector<const LexicalEntry*> out;
  for (const auto& e : entries_) {
    if (e.category != category) continue;
    if (animate && e.animate != animate) continue;
    out.push_back(&e);
  }
  return out;
}

}  // namespace drnn
