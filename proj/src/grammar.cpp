#include "drnn/grammar.hpp"

#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace drnn {

std::string_view to_string(Phenomenon p) {
  switch (p) {
    case Phenomenon::sv_agreement: return "sv_agreement";
    case Phenomenon::reflexive: return "reflexive";
    case Phenomenon::npi: return "npi";
  }
  return "?";
}

std::string_view to_string(RangeTag r) { return r == RangeTag::short_range ? "short" : "long"; }

Phenomenon parse_phenomenon(std::string_view s) {
  if (s == "sv_agreement") return Phenomenon::sv_agreement;
  if (s == "reflexive") return Phenomenon::reflexive;
  if (s == "npi") return Phenomenon::npi;
  throw std::invalid_argument("unknown phenomenon '" + std::string(s) + "'");
}

RangeTag parse_range(std::string_view s) {
  if (s == "short") return RangeTag::short_range;
  if (s == "long") return RangeTag::long_range;
  throw std::invalid_argument("unknown range tag '" + std::string(s) + "'");
}

GrammarError::GrammarError(const std::string& source, std::size_t line, const std::string& message)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + message), line_(line) {}

const Production* GrammarTemplate::rule(std::string_view lhs) const {
  for (const auto& r : rules) {
    if (r.lhs == lhs) return &r;
  }
  return nullptr;
}

namespace {

bool is_nonterminal_name(std::string_view s) {
  if (s.empty() || !std::isupper(static_cast<unsigned char>(s[0]))) return false;
  for (char c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
  }
  return true;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

class Parser {
 public:
  Parser(std::istream& in, std::string source, const Lexicon* lexicon)
      : in_(in), source_(std::move(source)), lexicon_(lexicon) {}

  std::vector<GrammarTemplate> run() {
    std::string raw;
    while (std::getline(in_, raw)) {
      ++line_;
      if (!raw.empty() && raw.back() == '\r') raw.pop_back();
      const std::size_t hash = raw.find('#');
      const std::string line = hash == std::string::npos ? raw : raw.substr(0, hash);
      const auto words = split_ws(line);
      if (words.empty()) continue;
      handle(words, line);
    }
    if (current_) fail("template '" + current_->name + "' is missing 'end'");
    return std::move(done_);
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw GrammarError(source_, line_, msg); }

  void handle(const std::vector<std::string>& words, const std::string& line) {
    const std::string& head = words[0];
    if (head == "template") {
      if (current_) fail("nested template (missing 'end' for '" + current_->name + "')");
      if (words.size() != 4) fail("expected: template <name> <phenomenon> <range>");
      GrammarTemplate t;
      t.name = words[1];
      try {
        t.phenomenon = parse_phenomenon(words[2]);
        t.range = parse_range(words[3]);
      } catch (const std::invalid_argument& e) {
        fail(e.what());
      }
      for (const auto& d : done_) {
        if (d.name == t.name) fail("duplicate template name '" + t.name + "'");
      }
      t.label = t.name;
      current_ = std::move(t);
      return;
    }
    if (!current_) fail("'" + head + "' outside a template block");
    if (head == "end") {
      finish();
      return;
    }
    if (head == "label") {
      const std::size_t pos = line.find("label") + 5;
      std::string text = line.substr(pos);
      const auto first = text.find_first_not_of(" \t");
      const auto last = text.find_last_not_of(" \t");
      if (first == std::string::npos) fail("empty label");
      current_->label = text.substr(first, last - first + 1);
      return;
    }
    if (head == "link") {
      if (words.size() != 3) fail("expected: link <SOURCE_SLOT> <TARGET_SLOT>");
      current_->links.push_back({words[1], words[2]});
      link_lines_.push_back(line_);
      return;
    }
    if (head == "npi") {
      if (words.size() != 3 && words.size() != 5) {
        fail("expected: npi <LICENSOR_SLOT> <INTRUSIVE_SLOT> [licensor neutral]");
      }
      if (current_->npi) fail("more than one npi directive");
      NpiDirective d{words[1], words[2]};
      if (words.size() == 5) {
        d.licensor_word = words[3];
        d.neutral_word = words[4];
      }
      current_->npi = d;
      return;
    }
    if (words.size() >= 2 && words[1] == "->") {
      if (!is_nonterminal_name(head)) fail("rule LHS '" + head + "' must be a capitalised name");
      parse_rule(head, std::vector<std::string>(words.begin() + 2, words.end()));
      return;
    }
    fail("unrecognised line starting with '" + head + "'");
  }

  Symbol parse_symbol(const std::string& tok) {
    Symbol s;
    if (tok[0] != '@') {
      s.kind = is_nonterminal_name(tok) ? Symbol::Kind::nonterminal : Symbol::Kind::literal;
      s.text = tok;
      return s;
    }
    s.kind = Symbol::Kind::category;
    const std::size_t bracket = tok.find('[');
    s.text = tok.substr(1, bracket == std::string::npos ? std::string::npos : bracket - 1);
    if (s.text.empty()) fail("empty category in '" + tok + "'");
    if (bracket == std::string::npos) return s;
    if (tok.back() != ']') fail("unterminated feature list in '" + tok + "'");
    std::istringstream feats(tok.substr(bracket + 1, tok.size() - bracket - 2));
    std::string feat;
    while (std::getline(feats, feat, ',')) {
      const std::size_t eq = feat.find('=');
      if (eq == std::string::npos) fail("feature '" + feat + "' lacks '='");
      const std::string key = feat.substr(0, eq);
      const std::string val = feat.substr(eq + 1);
      if (val.empty()) fail("feature '" + key + "' has no value");
      if (key == "num") {
        if (val == "sg" || val == "pl") {
          s.fixed_number = parse_number(val);
        } else {
          s.number_var = val;
        }
      } else if (key == "slot") {
        s.slot = val;
      } else if (key == "anim") {
        if (val != "yes" && val != "no") fail("anim must be yes or no");
        s.animate = val == "yes";
      } else {
        fail("unknown feature '" + key + "'");
      }
    }
    return s;
  }

  void parse_rule(const std::string& lhs, const std::vector<std::string>& rhs) {
    std::vector<std::vector<Symbol>> alts(1);
    for (const auto& tok : rhs) {
      if (tok == "|") {
        alts.emplace_back();
        continue;
      }
      alts.back().push_back(parse_symbol(tok));
    }
    for (const auto& a : alts) {
      if (a.empty()) fail("empty alternative in rule for '" + lhs + "'");
    }
    for (auto& r : current_->rules) {
      if (r.lhs == lhs) {
        for (auto& a : alts) r.alternatives.push_back(std::move(a));
        return;
      }
    }
    current_->rules.push_back({lhs, std::move(alts), line_});
  }

  void finish() {
    GrammarTemplate& t = *current_;
    if (t.rules.empty()) fail("template '" + t.name + "' has no rules");

    std::map<std::string, const Symbol*> slots;
    for (const auto& r : t.rules) {
      for (const auto& alt : r.alternatives) {
        for (const auto& s : alt) {
          if (s.kind == Symbol::Kind::nonterminal && !t.rule(s.text)) {
            throw GrammarError(source_, r.line, "undefined nonterminal '" + s.text + "'");
          }
          if (!s.slot.empty()) {
            if (s.kind != Symbol::Kind::category) {
              throw GrammarError(source_, r.line, "slot on a non-category symbol");
            }
            slots.emplace(s.slot, &s);
          }
          if (s.kind == Symbol::Kind::category && lexicon_ && s.text != kNpiCategory) {
            check_symbol(s, *lexicon_, r.line);
          }
        }
      }
    }
    check_acyclic(t);

    for (std::size_t i = 0; i < t.links.size(); ++i) {
      const auto& link = t.links[i];
      for (const std::string* slot : {&link.source_slot, &link.target_slot}) {
        auto it = slots.find(*slot);
        if (it == slots.end()) {
          throw GrammarError(source_, link_lines_[i], "link references unknown slot '" + *slot + "'");
        }
        if (!is_number_bearing(it->second->text)) {
          throw GrammarError(source_, link_lines_[i],
                             "slot '" + *slot + "' is on category '" + it->second->text +
                                 "', which carries no number");
        }
      }
    }
    if (t.links.empty()) fail("template '" + t.name + "' declares no subject-verb link");
    if (t.phenomenon == Phenomenon::npi) {
      if (!t.npi) fail("npi template '" + t.name + "' lacks an npi directive");
      for (const std::string* slot : {&t.npi->licensor_slot, &t.npi->intrusive_slot}) {
        auto it = slots.find(*slot);
        if (it == slots.end() || it->second->text != kNpiCategory) {
          fail("npi slot '" + *slot + "' must be an @npi terminal");
        }
      }
    } else if (t.npi) {
      fail("npi directive in a non-npi template");
    }
    done_.push_back(std::move(t));
    current_.reset();
    link_lines_.clear();
  }

  void check_symbol(const Symbol& s, const Lexicon& lex, std::size_t line) const {
    if (!lex.has_category(s.text)) {
      throw GrammarError(source_, line, "unknown terminal category '" + s.text + "'");
    }
    if (lex.in_category(s.text, s.animate).empty()) {
      throw GrammarError(source_, line,
                         "no " + std::string(*s.animate ? "animate" : "inanimate") +
                             " entries for category '" + s.text + "'");
    }
  }

  void check_acyclic(const GrammarTemplate& t) const {
    enum class Mark { none, active, done };
    std::map<std::string, Mark> mark;
    std::function<void(const Production&)> visit = [&](const Production& r) {
      mark[r.lhs] = Mark::active;
      for (const auto& alt : r.alternatives) {
        for (const auto& s : alt) {
          if (s.kind != Symbol::Kind::nonterminal) continue;
          const Mark m = mark[s.text];
          if (m == Mark::active) {
            throw GrammarError(source_, r.line,
                               "recursive rule: '" + s.text + "' is reachable from itself");
          }
          if (m == Mark::none) visit(*t.rule(s.text));
        }
      }
      mark[r.lhs] = Mark::done;
    };
    for (const auto& r : t.rules) {
      if (mark[r.lhs] == Mark::none) visit(r);
    }
  }

  std::istream& in_;
  std::string source_;
  const Lexicon* lexicon_;
  std::size_t line_ = 0;
  std::optional<GrammarTemplate> current_;
  std::vector<std::size_t> link_lines_;
  std::vector<GrammarTemplate> done_;
};

}  // namespace

std::vector<GrammarTemplate> parse_grammar(std::istream& in, const std::string& source,
                                           const Lexicon* lexicon) {
  return Parser(in, source, lexicon).run();
}

std::vector<GrammarTemplate> load_grammar(const std::filesystem::path& path, const Lexicon* lexicon) {
  std::ifstream in(path);
  if (!in) throw GrammarError(path.string(), 0, "cannot open grammar file");
  return parse_grammar(in, path.string(), lexicon);
}

void check_categories(const GrammarTemplate& tpl, const Lexicon& lexicon) {
  for (const auto& r : tpl.rules) {
    for (const auto& alt : r.alternatives) {
      for (const auto& s : alt) {
        if (s.kind != Symbol::Kind::category || s.text == kNpiCategory) continue;
        if (lexicon.in_category(s.text, s.animate).empty()) {
          throw GrammarError(tpl.name, r.line, "lexicon missing category '" + s.text + "'");
        }
      }
    }
  }
}

}  // namespace drnn
