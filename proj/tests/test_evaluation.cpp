#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "drnn/evaluation.hpp"
#include "scalar_oracle.hpp"

using namespace drnn;

namespace {

const std::string kData = DRNN_DATA_DIR;

const Lexicon& lexicon() {
  static const Lexicon lex = Lexicon::load(kData + "/lexicon.tsv");
  return lex;
}

AnnotatedSentence sentence(const std::string& text, std::size_t subj, std::size_t verb,
                           const std::string& tpl = "t") {
  auto s = annotate(tokenize(text), subj, verb, lexicon());
  s.template_name = tpl;
  return s;
}

AnnotatedSentence strata(std::size_t distance, std::size_t attractors, std::size_t non_attractors) {
  AnnotatedSentence s;
  s.tokens = {"x"};
  s.distance = distance;
  s.attractor_count = attractors;
  s.non_attractor_count = non_attractors;
  return s;
}

std::vector<AnnotatedSentence> balanced_set() {
  return {sentence("the author laughs", 1, 2),  sentence("the authors laugh", 1, 2),
          sentence("the guard smiles", 1, 2),   sentence("the guards smile", 1, 2),
          sentence("the book is red", 1, 2),    sentence("the books are red", 1, 2)};
}

ModelConfig small(Task task, std::size_t hidden = 3) {
  ModelConfig c = task == Task::language_model ? ModelConfig::lm_preset(CellKind::drnn)
                                               : ModelConfig::classifier_preset(CellKind::drnn, task);
  c.num_layers = 1;
  c.embedding_dim = 4;
  c.hidden_dim = hidden;
  c.dropout = 0.0;
  return c;
}

MinimalPair pair(const std::string& pref, const std::string& contrast, const std::string& label,
                 Phenomenon ph = Phenomenon::sv_agreement, PairMember pk = PairMember::grammatical,
                 PairMember ck = PairMember::ungrammatical) {
  MinimalPair p;
  p.preferred = tokenize(pref);
  p.contrast = tokenize(contrast);
  p.preferred_kind = pk;
  p.contrast_kind = ck;
  p.phenomenon = ph;
  p.label = label;
  p.template_name = label;
  return p;
}

struct PublishedTable {
  std::vector<std::string> models;
  std::vector<std::string> rows;
  std::vector<std::vector<double>> accuracy;
  std::vector<double> mean_rank;
};

PublishedTable published() {
  std::ifstream in(kData + "/published_accuracy.tsv");
  REQUIRE(in);
  PublishedTable t;
  std::string line;
  std::getline(in, line);
  std::istringstream head(line);
  std::string cell;
  std::getline(head, cell, '\t');
  while (std::getline(head, cell, '\t')) t.models.push_back(cell);
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string name;
    std::getline(ls, name, '\t');
    std::vector<double> values;
    while (std::getline(ls, cell, '\t')) values.push_back(std::stod(cell));
    if (name == "Mean arithmetic rank") {
      t.mean_rank = values;
    } else {
      t.rows.push_back(name);
      t.accuracy.push_back(values);
    }
  }
  return t;
}

// Sort-based ranking: positions 1..M in descending order, tied groups share
// either their mean position or their first position.
std::vector<double> sorted_ranks(const std::vector<std::vector<double>>& acc, bool average) {
  const std::size_t M = acc[0].size();
  std::vector<double> sum(M, 0.0);
  for (const auto& row : acc) {
    std::vector<std::size_t> order(M);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return row[a] > row[b]; });
    for (std::size_t i = 0; i < M;) {
      std::size_t j = i;
      while (j < M && row[order[j]] == row[order[i]]) ++j;
      const double r = average ? (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0 : static_cast<double>(i + 1);
      for (std::size_t k = i; k < j; ++k) sum[order[k]] += r;
      i = j;
    }
  }
  for (double& s : sum) s /= static_cast<double>(acc.size());
  return sum;
}

}  // namespace

TEST_CASE("accuracy: tie rule and hand-counted fixture") {
  // 6 of 8 above 0.5; the 0.5 entry is a tie and counts as wrong.
  const std::vector<double> p{0.9, 0.51, 0.7, 0.5, 0.2, 0.99, 0.6, 0.8};
  CHECK(accuracy_from_probabilities(p) == 0.75);
  CHECK(accuracy_from_probabilities(std::vector<double>(5, 1.0)) == 1.0);
  CHECK_THROWS_AS(accuracy_from_probabilities({}), EvaluationError);

  const auto data = balanced_set();
  auto m = init_model(small(Task::number_prediction), Vocabulary::from_sentences(data), 2);
  m.head_w.fill(0.0);
  CHECK(accuracy(m, data).accuracy == 0.0);
  m.head_b[1] = 1.0;
  const auto row = accuracy(m, data, "constant plural");
  CHECK(row.accuracy == 0.5);
  CHECK(row.n_items == 6);
  CHECK(row.name == "constant plural");

  auto lm = init_model(small(Task::language_model), Vocabulary::from_sentences(data), 2);
  CHECK_THROWS_AS(accuracy(lm, data), std::invalid_argument);
}

TEST_CASE("stratify: hand-counted strata, absent cells, count invariant") {
  std::vector<AnnotatedSentence> c;
  std::vector<bool> ok;
  auto add = [&](std::size_t d, std::size_t a, std::size_t n, bool right) {
    c.push_back(strata(d, a, n));
    ok.push_back(right);
  };
  // Stratum n=0: 3/4; n=1: 1/2; n=2: 2/3. Two items outside the fixed keys.
  add(7, 1, 0, true), add(7, 1, 0, true), add(7, 1, 0, false), add(7, 1, 0, true);
  add(7, 1, 1, true), add(7, 1, 1, false);
  add(7, 1, 2, true), add(7, 1, 2, false), add(7, 1, 2, true);
  add(6, 1, 0, true), add(7, 0, 2, false);

  const auto t = stratify(c, ok, {{StratumKey::distance, 7}, {StratumKey::attractor_count, 1}},
                          StratumKey::non_attractor_count, 2);
  REQUIRE(t.cells.size() == 3);
  CHECK(t.cells[0].value == 0);
  CHECK(*t.cells[0].accuracy == 0.75);
  CHECK(*t.cells[1].accuracy == 0.5);
  CHECK(*t.cells[2].accuracy == doctest::Approx(2.0 / 3.0));
  std::size_t total = 0;
  for (const auto& cell : t.cells) total += cell.n_items;
  CHECK(total == 9);

  const auto strict = stratify(c, ok, {{StratumKey::distance, 7}, {StratumKey::attractor_count, 1}},
                               StratumKey::non_attractor_count, 3);
  CHECK(strict.cells[1].n_items == 2);
  CHECK_FALSE(strict.cells[1].accuracy);

  std::ostringstream os;
  write_stratified_csv(os, strict);
  CHECK(os.str() == "non_attractors,n,accuracy\n0,4,0.75\n1,2,\n2,3,0.6666666666666666\n");

  const auto one = stratify(std::vector<AnnotatedSentence>(3, strata(4, 0, 0)), {true, true, false}, {},
                            StratumKey::attractor_count, 1);
  CHECK(one.cells.size() == 1);

  const auto none = stratify(c, ok, {{StratumKey::distance, 99}}, StratumKey::attractor_count);
  CHECK(none.cells.empty());
  CHECK_THROWS_AS(stratify(c, {true}, {}, StratumKey::distance), std::invalid_argument);
}

TEST_CASE("stratified_accuracy on the distance-7 grammar covers non-attractor counts up to 2") {
  const Lexicon& lex = lexicon();
  const auto tpls = load_grammar(kData + "/grammars/distance7.tpl", &lex);
  const auto data = generate(tpls, lex, 5, 600, 1.0);
  auto m = init_model(small(Task::number_prediction), Vocabulary::from_sentences(data), 3);
  const auto t = stratified_accuracy(m, data, {{StratumKey::distance, 7}, {StratumKey::attractor_count, 1}},
                                     StratumKey::non_attractor_count);
  REQUIRE(t.cells.size() == 3);
  std::size_t matching = 0, total = 0;
  for (const auto& s : data) matching += s.distance == 7 && s.attractor_count == 1;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(t.cells[i].value == i);
    CHECK(t.cells[i].accuracy);
    total += t.cells[i].n_items;
  }
  CHECK(total == matching);
}

TEST_CASE("confidence_profile: symmetric model, single sentence, scalar oracle") {
  const std::vector<AnnotatedSentence> three{sentence("the pilot near the door swims", 1, 5),
                                             sentence("the pilots near the door swim", 1, 5),
                                             sentence("the author near the guard laughs", 1, 5)};
  auto m = init_model(small(Task::number_prediction), Vocabulary::from_sentences(three), 6);

  auto sym = m;
  sym.head_w.fill(0.0);
  for (const auto& p : confidence_profile(sym, three).points) CHECK(p.mean == 0.5);

  const auto single = confidence_profile(m, std::span(three).first(1));
  const auto curve = classifier_curve(m, three[0].tokens);
  REQUIRE(single.points.size() == curve.size());
  for (std::size_t t = 0; t < curve.size(); ++t) CHECK(single.points[t].mean == curve[t][0]);

  const auto prof = confidence_profile(m, three);
  CHECK(prof.template_name == "t");
  CHECK(prof.points[1].label == "subject");
  CHECK(prof.points[5].label == "verb");
  CHECK(prof.points[3].example == "the");
  for (std::size_t t = 0; t < 6; ++t) {
    double sum = 0.0;
    for (const auto& s : three) {
      ScalarOracle o(m);
      for (std::size_t i = 0; i <= t; ++i) o.feed(*m.vocab.find(s.tokens[i]));
      sum += o.probs()[s.subject_number == Number::sg ? 0 : 1];
    }
    CHECK(prof.points[t].mean == doctest::Approx(sum / 3.0).epsilon(1e-13));
    CHECK(prof.points[t].n == 3);
  }

  std::ostringstream os;
  write_profile_csv(os, confidence_profile(sym, three));
  CHECK(os.str().rfind("position,label,example,mean,n\n0,pos0,the,0.5,3\n1,subject,", 0) == 0);

  auto mixed = three;
  mixed[2].template_name = "other";
  CHECK_THROWS_AS(confidence_profile(m, mixed), EvaluationError);
  auto ragged = three;
  ragged[2] = sentence("the author laughs", 1, 2);
  CHECK_THROWS_AS(confidence_profile(m, ragged), EvaluationError);
}

TEST_CASE("perplexity: uniform, perfect, hand fixture, cross-operation identity") {
  const auto data = balanced_set();
  auto u = init_model(small(Task::language_model), Vocabulary::from_sentences(data), 1);
  u.head_w.fill(0.0);
  CHECK(perplexity(u, data) == doctest::Approx(static_cast<double>(u.vocab.size())).epsilon(1e-13));

  AnnotatedSentence hey;
  hey.tokens = {"hey", "hey"};
  const std::vector<AnnotatedSentence> mono{hey, hey};
  const auto perfect = init_model(small(Task::language_model), Vocabulary::from_sentences(mono), 1);
  CHECK(perplexity(perfect, mono) == 1.0);

  // Token probabilities 0.5, 0.25 and 0.5: exp(-ln(1/16) / 3) = 16^(1/3).
  CHECK(perplexity_from_logprob(std::log(0.5) + std::log(0.25) + std::log(0.5), 3) ==
        doctest::Approx(std::cbrt(16.0)).epsilon(1e-14));
  CHECK_THROWS_AS(perplexity_from_logprob(0.0, 0), EvaluationError);

  const auto m = init_model(small(Task::language_model, 7), Vocabulary::from_sentences(data), 9);
  double lp = 0.0;
  for (const auto& s : data) lp += lm_logprob(m, s.tokens);
  CHECK(std::abs(perplexity(m, data) - std::exp(-lp / static_cast<double>(token_count(data)))) < 1e-10);
  CHECK(corpus_logprob(m, data) == lp);
  CHECK(token_count(data) == 20);
}

TEST_CASE("unigram baseline with add-one smoothing") {
  AnnotatedSentence a, b;
  a.tokens = {"a", "b", "a"};
  b.tokens = {"a", "c"};
  // Vocabulary {a, b, c}; counts 2, 1, 0 over 3 tokens; denominator 6.
  // p(a) = 3/6, p(c) = 1/6, so the perplexity is sqrt(12).
  CHECK(unigram_perplexity(std::vector{a}, std::vector{b}) == doctest::Approx(std::sqrt(12.0)).epsilon(1e-14));
}

TEST_CASE("targeted_eval: 4-pair fixture, tie rule, grouping, shift invariance") {
  std::vector<MinimalPair> pairs{pair("the author laughs", "the author laugh", "Simple"),
                                 pair("the authors laugh", "the authors laughs", "Simple"),
                                 pair("the guard smiles", "the guard smile", "Simple"),
                                 pair("the guards smile", "the guards smiles", "Simple")};
  const std::map<std::string, double> lp{
      {"the author laughs", -3.0}, {"the author laugh", -4.0},  {"the authors laugh", -5.0},
      {"the authors laughs", -4.5}, {"the guard smiles", -2.0}, {"the guard smile", -2.0},
      {"the guards smile", -1.0},  {"the guards smiles", -7.0}};
  const SentenceScorer score = [&](std::span<const std::string> t) {
    std::string s;
    for (const auto& w : t) s += (s.empty() ? "" : " ") + w;
    return lp.at(s);
  };
  // Correct: pairs 1 and 4. Pair 2 prefers the contrast; pair 3 ties.
  auto rows = targeted_eval(pairs, score);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].accuracy == 0.5);
  CHECK(rows[0].n_items == 4);

  // Fix pair 2: 3 of 4.
  std::swap(pairs[1].preferred, pairs[1].contrast);
  rows = targeted_eval(pairs, score);
  CHECK(rows[0].accuracy == 0.75);
  CHECK(rows[0].correct == 3);

  const SentenceScorer shifted = [&](std::span<const std::string> t) { return score(t) + 123.5; };
  CHECK(targeted_eval(pairs, shifted)[0].accuracy == 0.75);

  const SentenceScorer always = [](std::span<const std::string> t) { return t.back() == "laughs" ? 1.0 : 0.0; };
  const std::vector<MinimalPair> ideal{pair("the author laughs", "the author laugh", "Simple"),
                                       pair("no author has ever laughs", "the author has ever laugh", "NPI simple",
                                            Phenomenon::npi),
                                       pair("the author laughs", "no author laugh", "NPI simple", Phenomenon::npi,
                                            PairMember::intrusive)};
  rows = targeted_eval(ideal, always);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) CHECK(r.accuracy == 1.0);
  CHECK(rows[0].row_name() == "Simple");
  CHECK(rows[1].row_name() == "NPI simple (grammatical vs. ungrammatical)");
  CHECK(rows[2].row_name() == "NPI simple (intrusive vs. ungrammatical)");

  std::ostringstream os;
  write_targeted_csv(os, rows);
  CHECK(os.str() ==
        "row,phenomenon,range,correct,n,accuracy\nSimple,sv_agreement,short,1,1,1\n"
        "NPI simple (grammatical vs. ungrammatical),npi,short,1,1,1\n"
        "NPI simple (intrusive vs. ungrammatical),npi,short,1,1,1\n");

  CHECK_THROWS_AS(targeted_eval({}, score), EvaluationError);
}

TEST_CASE("targeted_eval over a language model matches lm_logprob comparisons") {
  const Lexicon& lex = lexicon();
  const auto tpls = load_grammar(kData + "/grammars/targeted.tpl", &lex);
  const auto pairs = generate_minimal_pairs(tpls, lex, 4, 60);
  std::vector<AnnotatedSentence> sents;
  for (const auto& p : pairs) {
    for (const auto* t : {&p.preferred, &p.contrast}) {
      AnnotatedSentence s;
      s.tokens = *t;
      sents.push_back(s);
    }
  }
  const auto m = init_model(small(Task::language_model, 5), Vocabulary::from_sentences(sents), 4);
  const auto rows = targeted_eval(m, pairs);
  CHECK(rows.size() == 19);
  std::size_t correct = 0, n = 0;
  for (const auto& r : rows) {
    correct += r.correct;
    n += r.n_items;
  }
  std::size_t expect = 0;
  for (const auto& p : pairs) expect += lm_logprob(m, p.preferred) > lm_logprob(m, p.contrast);
  CHECK(n == pairs.size());
  CHECK(correct == expect);
}

TEST_CASE("mean arithmetic rank: trivial cases and independent oracle") {
  CHECK(mean_arithmetic_rank({{0.3}, {0.9}}) == std::vector<double>{1.0});
  CHECK(mean_arithmetic_rank({{0.9, 0.1}, {0.6, 0.5}}) == std::vector<double>{1.0, 2.0});
  CHECK(mean_arithmetic_rank({{0.5, 0.5, 0.2}}, TieRule::average) == std::vector<double>{1.5, 1.5, 3.0});
  CHECK(mean_arithmetic_rank({{0.5, 0.5, 0.2}}, TieRule::min) == std::vector<double>{1.0, 1.0, 3.0});
  CHECK_THROWS_AS(mean_arithmetic_rank({{0.1, 0.2}, {0.3}}), std::invalid_argument);

  const auto table = published();
  REQUIRE(table.accuracy.size() == 19);
  REQUIRE(table.models.size() == 7);
  const auto avg = mean_arithmetic_rank(table.accuracy, TieRule::average);
  const auto mn = mean_arithmetic_rank(table.accuracy, TieRule::min);
  const auto avg_ref = sorted_ranks(table.accuracy, true);
  const auto min_ref = sorted_ranks(table.accuracy, false);
  for (std::size_t m = 0; m < 7; ++m) {
    CAPTURE(table.models[m]);
    CHECK(avg[m] == doctest::Approx(avg_ref[m]).epsilon(1e-14));
    CHECK(mn[m] == doctest::Approx(min_ref[m]).epsilon(1e-14));
    // The published row is reproduced when tied models share the better rank.
    CHECK(std::abs(mn[m] - table.mean_rank[m]) <= 0.05);
  }
}

TEST_CASE("targeted table layout") {
  TargetedRow a{"Simple", Phenomenon::sv_agreement, RangeTag::short_range, PairMember::grammatical,
                PairMember::ungrammatical, 9, 10, 0.9};
  TargetedRow b{"Across a PP", Phenomenon::sv_agreement, RangeTag::long_range, PairMember::grammatical,
                PairMember::ungrammatical, 1, 2, 0.5};
  auto a2 = a;
  a2.accuracy = 0.95;
  const std::vector<ModelColumn> cols{{"SRN", {a, b}, 101.5}, {"DRNN", {a2}, std::nullopt}};
  std::ostringstream os;
  write_targeted_table(os, cols);
  CHECK(os.str() ==
        "Phenomenon                  SRN    DRNN\n"
        "Simple                     0.90    0.95\n"
        "Across a PP                0.50       -\n"
        "Mean arithmetic rank       2.00    1.00\n"
        "Validation perplexity    101.50       -\n");
}

TEST_CASE("grammaticality_generalization") {
  const std::vector<MinimalPair> pairs{pair("the author laughs", "the author laugh", "simple"),
                                       pair("the authors laugh", "the authors laughs", "simple"),
                                       pair("the guard near the door smiles", "the guard near the door smile", "pp")};
  const SentenceScorer oracle = [](std::span<const std::string> t) {
    const bool sg = t[1].back() != 's';
    return (t.back().back() == 's') == sg ? 1.0 : 0.0;
  };
  for (const auto& r : grammaticality_generalization(pairs, oracle)) CHECK(r.accuracy == 1.0);

  const SentenceScorer constant = [](std::span<const std::string>) { return 0.8; };
  const auto rows = grammaticality_generalization(pairs, constant);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].name == "simple");
  CHECK(rows[0].n_items == 4);
  CHECK(rows[0].accuracy == 0.5);

  // Says grammatical whenever the last word ends in "s": right on members
  // with a singular subject, wrong on members with a plural one.
  const SentenceScorer ends_s = [](std::span<const std::string> t) { return t.back().back() == 's' ? 0.9 : 0.1; };
  const auto hand = grammaticality_generalization(pairs, ends_s);
  CHECK(hand[0].accuracy == 0.5);
  CHECK(hand[1].accuracy == 1.0);

  std::ostringstream os;
  write_accuracy_csv(os, hand);
  CHECK(os.str() == "name,n,accuracy\nsimple,4,0.5\npp,2,1\n");
}
