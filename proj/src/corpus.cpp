#include "drnn/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "drnn/rng.hpp"

namespace drnn {

std::string AnnotatedSentence::text() const { return join_tokens(tokens); }

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

AnnotatedSentence annotate(std::vector<std::string> tokens, std::size_t subject_index,
                           std::size_t verb_index, const Lexicon& lexicon) {
  if (subject_index >= verb_index || verb_index >= tokens.size()) {
    throw CorpusError("annotate: need subject_index < verb_index < " +
                      std::to_string(tokens.size()) + ", got " + std::to_string(subject_index) +
                      " and " + std::to_string(verb_index));
  }
  const auto subj = lexicon.lookup(tokens[subject_index]);
  if (!subj || subj->entry->category != "noun" || !subj->number) {
    throw CorpusError("annotate: subject '" + tokens[subject_index] + "' is not a lexicon noun");
  }
  const auto verb = lexicon.lookup(tokens[verb_index]);
  if (!verb || !verb->number) {
    throw CorpusError("annotate: '" + tokens[verb_index] + "' has no grammatical number in the lexicon");
  }
  AnnotatedSentence s;
  s.subject_index = subject_index;
  s.verb_index = verb_index;
  s.subject_number = *subj->number;
  s.verb_number = *verb->number;
  for (std::size_t i = subject_index + 1; i < verb_index; ++i) {
    const auto info = lexicon.lookup(tokens[i]);
    if (!info || info->entry->category != "noun" || !info->number) continue;
    s.intervening_nouns.push_back({i, *info->number});
    if (*info->number != s.subject_number) {
      ++s.attractor_count;
    } else {
      ++s.non_attractor_count;
    }
  }
  s.distance = verb_index - subject_index;
  s.grammatical = s.verb_number == s.subject_number;
  s.tokens = std::move(tokens);
  return s;
}

std::string_view to_string(PairMember m) {
  switch (m) {
    case PairMember::grammatical: return "grammatical";
    case PairMember::intrusive: return "intrusive";
    case PairMember::ungrammatical: return "ungrammatical";
  }
  return "?";
}

PairMember parse_pair_member(std::string_view s) {
  if (s == "grammatical") return PairMember::grammatical;
  if (s == "intrusive") return PairMember::intrusive;
  if (s == "ungrammatical") return PairMember::ungrammatical;
  throw std::invalid_argument("unknown pair member '" + std::string(s) + "'");
}

std::vector<std::size_t> MinimalPair::differing_positions() const {
  std::vector<std::size_t> out;
  const std::size_t n = std::max(preferred.size(), contrast.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= preferred.size() || i >= contrast.size() || preferred[i] != contrast[i]) {
      out.push_back(i);
    }
  }
  return out;
}

namespace {

// Every random decision during realization goes through a Chooser so that a
// recorded decision sequence can be replayed (minimal pairs) or enumerated.
class Chooser {
 public:
  virtual ~Chooser() = default;
  virtual std::size_t pick(std::size_t n) = 0;
};

class RandomChooser final : public Chooser {
 public:
  explicit RandomChooser(Rng& rng) : rng_(rng) {}
  std::size_t pick(std::size_t n) override {
    const std::size_t k = rng_.index(n);
    taken.push_back(k);
    return k;
  }
  std::vector<std::size_t> taken;

 private:
  Rng& rng_;
};

class ReplayChooser final : public Chooser {
 public:
  explicit ReplayChooser(const std::vector<std::size_t>& prefix) : prefix_(prefix) {}
  std::size_t pick(std::size_t n) override {
    const std::size_t i = taken.size();
    const std::size_t k = i < prefix_.size() ? prefix_[i] : 0;
    if (k >= n) throw std::logic_error("replayed choice out of range");
    taken.push_back(k);
    radices.push_back(n);
    return k;
  }
  std::vector<std::size_t> taken;
  std::vector<std::size_t> radices;

 private:
  const std::vector<std::size_t>& prefix_;
};

void expand(const GrammarTemplate& t, const Production& rule, Chooser& ch,
            std::vector<const Symbol*>& out) {
  const auto& alt = rule.alternatives[ch.pick(rule.alternatives.size())];
  for (const Symbol& s : alt) {
    if (s.kind == Symbol::Kind::nonterminal) {
      expand(t, *t.rule(s.text), ch, out);
    } else {
      out.push_back(&s);
    }
  }
}

AnnotatedSentence realize(const GrammarTemplate& t, const Lexicon& lex, Chooser& ch,
                          PairMember variant) {
  std::vector<const Symbol*> terms;
  expand(t, t.rules.front(), ch, terms);

  std::map<std::string, std::size_t> slot_pos;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (!terms[i]->slot.empty()) slot_pos[terms[i]->slot] = i;
  }
  const auto position = [&](const std::string& slot) {
    auto it = slot_pos.find(slot);
    if (it == slot_pos.end()) {
      throw CorpusError("template '" + t.name + "': a derivation lacks slot '" + slot + "'");
    }
    return it->second;
  };

  std::vector<std::optional<Number>> numbers(terms.size());
  std::map<std::string, Number> vars;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const Symbol& s = *terms[i];
    if (s.kind != Symbol::Kind::category || !is_number_bearing(s.text)) continue;
    if (s.fixed_number) {
      numbers[i] = s.fixed_number;
    } else if (!s.number_var.empty()) {
      auto it = vars.find(s.number_var);
      if (it == vars.end()) {
        it = vars.emplace(s.number_var, ch.pick(2) == 0 ? Number::sg : Number::pl).first;
      }
      numbers[i] = it->second;
    } else {
      numbers[i] = ch.pick(2) == 0 ? Number::sg : Number::pl;
    }
  }
  for (const auto& link : t.links) numbers[position(link.target_slot)] = numbers[position(link.source_slot)];
  const std::size_t subject_pos = position(t.designated_link().source_slot);
  const std::size_t verb_pos = position(t.designated_link().target_slot);
  if (t.phenomenon != Phenomenon::npi && variant == PairMember::ungrammatical) {
    numbers[verb_pos] = flip(*numbers[verb_pos]);
  }

  std::vector<std::string> tokens;
  tokens.reserve(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const Symbol& s = *terms[i];
    if (s.kind == Symbol::Kind::literal) {
      tokens.push_back(s.text);
    } else if (s.text == kNpiCategory) {
      const NpiDirective& npi = *t.npi;
      const bool licensed = (s.slot == npi.licensor_slot && variant == PairMember::grammatical) ||
                            (s.slot == npi.intrusive_slot && variant == PairMember::intrusive);
      tokens.push_back(licensed ? npi.licensor_word : npi.neutral_word);
    } else {
      const auto candidates = lex.in_category(s.text, s.animate);
      if (candidates.empty()) {
        throw CorpusError("lexicon has no entries for category '" + s.text + "'");
      }
      const LexicalEntry* e = candidates[ch.pick(candidates.size())];
      tokens.push_back(e->form(numbers[i].value_or(Number::sg)));
    }
  }

  AnnotatedSentence out = annotate(std::move(tokens), subject_pos, verb_pos, lex);
  out.template_name = t.name;
  out.phenomenon = t.phenomenon;
  if (t.phenomenon == Phenomenon::npi) out.grammatical = variant == PairMember::grammatical;
  return out;
}

std::vector<std::size_t> per_template_counts(std::size_t templates, std::size_t count) {
  std::vector<std::size_t> out(templates, templates ? count / templates : 0);
  for (std::size_t i = 0; i < templates && i < count % templates; ++i) ++out[i];
  return out;
}

}  // namespace

std::vector<AnnotatedSentence> generate(std::span<const GrammarTemplate> templates,
                                        const Lexicon& lexicon, std::uint64_t seed,
                                        std::size_t count, double grammatical_ratio) {
  if (!(grammatical_ratio >= 0.0 && grammatical_ratio <= 1.0)) {
    throw std::invalid_argument("grammatical_ratio must lie in [0, 1]");
  }
  std::vector<AnnotatedSentence> out;
  if (count == 0) return out;
  if (templates.empty()) throw std::invalid_argument("generate: no templates");
  for (const auto& t : templates) check_categories(t, lexicon);
  const auto counts = per_template_counts(templates.size(), count);
  out.reserve(count);
  for (std::size_t ti = 0; ti < templates.size(); ++ti) {
    Rng rng = Rng::derive(seed, ti);
    for (std::size_t k = 0; k < counts[ti]; ++k) {
      const bool grammatical = rng.bernoulli(grammatical_ratio);
      RandomChooser ch(rng);
      out.push_back(realize(templates[ti], lexicon, ch,
                            grammatical ? PairMember::grammatical : PairMember::ungrammatical));
    }
  }
  return out;
}

std::vector<AnnotatedSentence> enumerate_grammatical(const GrammarTemplate& tpl,
                                                     const Lexicon& lexicon) {
  check_categories(tpl, lexicon);
  std::vector<AnnotatedSentence> out;
  std::set<std::vector<std::string>> seen;
  std::vector<std::size_t> prefix;
  while (true) {
    ReplayChooser ch(prefix);
    AnnotatedSentence s = realize(tpl, lexicon, ch, PairMember::grammatical);
    if (seen.insert(s.tokens).second) out.push_back(std::move(s));
    std::size_t k = ch.taken.size();
    while (k > 0 && ch.taken[k - 1] + 1 >= ch.radices[k - 1]) --k;
    if (k == 0) break;
    prefix.assign(ch.taken.begin(), ch.taken.begin() + static_cast<std::ptrdiff_t>(k));
    ++prefix.back();
  }
  return out;
}

std::vector<MinimalPair> generate_minimal_pairs(std::span<const GrammarTemplate> templates,
                                                const Lexicon& lexicon, std::uint64_t seed,
                                                std::size_t count) {
  std::vector<MinimalPair> out;
  if (count == 0) return out;
  if (templates.empty()) throw std::invalid_argument("generate_minimal_pairs: no templates");
  for (const auto& t : templates) check_categories(t, lexicon);
  const auto counts = per_template_counts(templates.size(), count);
  for (std::size_t ti = 0; ti < templates.size(); ++ti) {
    const GrammarTemplate& t = templates[ti];
    Rng rng = Rng::derive(seed, ti);
    for (std::size_t k = 0; k < counts[ti]; ++k) {
      RandomChooser first(rng);
      const AnnotatedSentence g = realize(t, lexicon, first, PairMember::grammatical);
      const auto variant = [&](PairMember m) {
        ReplayChooser again(first.taken);
        return realize(t, lexicon, again, m).tokens;
      };
      const auto make = [&](std::vector<std::string> a, PairMember ka, std::vector<std::string> b,
                            PairMember kb) {
        return MinimalPair{std::move(a), std::move(b), ka, kb, t.phenomenon, t.range, t.name, t.label};
      };
      const auto ungrammatical = variant(PairMember::ungrammatical);
      if (t.phenomenon == Phenomenon::npi) {
        const auto intrusive = variant(PairMember::intrusive);
        out.push_back(make(g.tokens, PairMember::grammatical, intrusive, PairMember::intrusive));
        out.push_back(make(intrusive, PairMember::intrusive, ungrammatical, PairMember::ungrammatical));
        out.push_back(make(g.tokens, PairMember::grammatical, ungrammatical, PairMember::ungrammatical));
      } else {
        out.push_back(make(g.tokens, PairMember::grammatical, ungrammatical, PairMember::ungrammatical));
      }
    }
  }
  return out;
}

CorpusSplit split(const std::vector<AnnotatedSentence>& corpus, double train_fraction,
                  double valid_fraction, std::uint64_t seed) {
  if (train_fraction < 0.0 || valid_fraction < 0.0 || train_fraction + valid_fraction > 1.0 + 1e-12) {
    throw std::invalid_argument("split fractions must be non-negative and sum to at most 1");
  }
  const std::size_t n = corpus.size();
  const auto n_train = std::min<std::size_t>(n, std::llround(train_fraction * static_cast<double>(n)));
  const auto n_valid =
      std::min<std::size_t>(n - n_train, std::llround(valid_fraction * static_cast<double>(n)));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<int> part(n, 2);
  for (std::size_t i = 0; i < n_train; ++i) part[order[i]] = 0;
  for (std::size_t i = n_train; i < n_train + n_valid; ++i) part[order[i]] = 1;

  CorpusSplit out;
  for (std::size_t i = 0; i < n; ++i) {
    (part[i] == 0 ? out.train : part[i] == 1 ? out.valid : out.test).push_back(corpus[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// TSV

namespace {

constexpr const char* kCorpusHeader =
    "tokens\tsubject_index\tverb_index\tsubject_number\tverb_number\tattractors\tnon_attractors\t"
    "distance\tgrammatical\ttemplate\tphenomenon";
constexpr const char* kPairsHeader =
    "preferred\tcontrast\tpreferred_kind\tcontrast_kind\tphenomenon\trange\ttemplate\tlabel";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

std::size_t parse_index(const std::string& s, const std::string& where) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw CorpusError(where + ": expected a non-negative integer, got '" + s + "'");
  }
  return std::stoull(s);
}

}  // namespace

void write_corpus_tsv(std::ostream& os, const std::vector<AnnotatedSentence>& corpus) {
  os << kCorpusHeader << '\n';
  for (const auto& s : corpus) {
    os << s.text() << '\t' << s.subject_index << '\t' << s.verb_index << '\t'
       << to_string(s.subject_number) << '\t' << to_string(s.verb_number) << '\t'
       << s.attractor_count << '\t' << s.non_attractor_count << '\t' << s.distance << '\t'
       << (s.grammatical ? 1 : 0) << '\t' << s.template_name << '\t' << to_string(s.phenomenon)
       << '\n';
  }
}

std::vector<AnnotatedSentence> read_corpus_tsv(std::istream& is, const Lexicon* lexicon,
                                               const std::string& source) {
  std::vector<AnnotatedSentence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("tokens\t", 0) == 0) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto cols = split_tabs(line);
    if (cols.size() != 11) throw CorpusError(where + ": expected 11 columns, got " + std::to_string(cols.size()));
    AnnotatedSentence s;
    try {
      s.tokens = tokenize(cols[0]);
      s.subject_index = parse_index(cols[1], where);
      s.verb_index = parse_index(cols[2], where);
      s.subject_number = parse_number(cols[3]);
      s.verb_number = parse_number(cols[4]);
      s.attractor_count = parse_index(cols[5], where);
      s.non_attractor_count = parse_index(cols[6], where);
      s.distance = parse_index(cols[7], where);
      if (cols[8] != "0" && cols[8] != "1") throw CorpusError(where + ": grammatical must be 0 or 1");
      s.grammatical = cols[8] == "1";
      s.template_name = cols[9];
      s.phenomenon = parse_phenomenon(cols[10]);
    } catch (const std::invalid_argument& e) {
      throw CorpusError(where + ": " + e.what());
    }
    if (s.verb_index >= s.tokens.size() || s.subject_index >= s.verb_index) {
      throw CorpusError(where + ": subject/verb indices out of range");
    }
    if (lexicon) {
      const AnnotatedSentence check = annotate(s.tokens, s.subject_index, s.verb_index, *lexicon);
      if (check.attractor_count != s.attractor_count ||
          check.non_attractor_count != s.non_attractor_count || check.distance != s.distance ||
          check.subject_number != s.subject_number || check.verb_number != s.verb_number) {
        throw CorpusError(where + ": stored annotation disagrees with the lexicon");
      }
      s.intervening_nouns = check.intervening_nouns;
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_corpus(const std::filesystem::path& path, const std::vector<AnnotatedSentence>& corpus) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CorpusError("cannot write '" + path.string() + "'");
  write_corpus_tsv(os, corpus);
}

std::vector<AnnotatedSentence> load_corpus(const std::filesystem::path& path, const Lexicon* lexicon) {
  std::ifstream is(path);
  if (!is) throw CorpusError("cannot open corpus '" + path.string() + "'");
  return read_corpus_tsv(is, lexicon, path.string());
}

void write_pairs_tsv(std::ostream& os, const std::vector<MinimalPair>& pairs) {
  os << kPairsHeader << '\n';
  for (const auto& p : pairs) {
    os << join_tokens(p.preferred) << '\t' << join_tokens(p.contrast) << '\t'
       << to_string(p.preferred_kind) << '\t' << to_string(p.contrast_kind) << '\t'
       << to_string(p.phenomenon) << '\t' << to_string(p.range) << '\t' << p.template_name << '\t'
       << p.label << '\n';
  }
}

std::vector<MinimalPair> read_pairs_tsv(std::istream& is, const std::string& source) {
  std::vector<MinimalPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("preferred\t", 0) == 0) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto cols = split_tabs(line);
    if (cols.size() != 8) throw CorpusError(where + ": expected 8 columns");
    try {
      out.push_back(MinimalPair{tokenize(cols[0]), tokenize(cols[1]), parse_pair_member(cols[2]),
                                parse_pair_member(cols[3]), parse_phenomenon(cols[4]),
                                parse_range(cols[5]), cols[6], cols[7]});
    } catch (const std::invalid_argument& e) {
      throw CorpusError(where + ": " + e.what());
    }
  }
  return out;
}

void save_pairs(const std::filesystem::path& path, const std::vector<MinimalPair>& pairs) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CorpusError("cannot write '" + path.string() + "'");
  write_pairs_tsv(os, pairs);
}

std::vector<MinimalPair> load_pairs(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw CorpusError("cannot open pairs file '" + path.string() + "'");
  return read_pairs_tsv(is, path.string());
}

}  // namespace drnn
