// Acceptance runner: one PASS/FAIL line per criterion.
// Usage: drnn_acceptance [id ...]   (ids: 1 2 3 4 5 6 7 8a 8b 8c 9 10; default all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "drnn/cell_gradcheck.hpp"
#include "drnn/cells.hpp"
#include "drnn/cli.hpp"
#include "drnn/corpus.hpp"
#include "drnn/evaluation.hpp"
#include "drnn/rng.hpp"
#include "drnn/training.hpp"

using namespace drnn;
namespace fs = std::filesystem;

namespace {

const fs::path kData = DRNN_DATA_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

const Lexicon& lexicon() {
  static const Lexicon lex = Lexicon::load(kData / "lexicon.tsv");
  return lex;
}

std::vector<GrammarTemplate> grammar(const std::string& name) {
  return load_grammar(kData / "grammars" / (name + ".tpl"), &lexicon());
}

Tensor random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-scale, scale);
  return Tensor::vector(v);
}

fs::path work_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "drnn-acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

int cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    files[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return files;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  GradcheckOptions o;
  o.configs = 20;
  o.step = 1e-5;
  o.tolerance = 1e-5;
  bool pass = true;
  std::string detail;
  for (CellKind k : kAllCellKinds) {
    const auto r = gradcheck_cell(k, o);
    pass = pass && r.passed && r.configs_checked >= 20;
    detail += std::string(to_string(k)) + " " + sci(r.max_relative_error) + "; ";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  pass = pass && secs < 120.0;
  return {pass, detail + "20 configs each, " + num(secs, 1) + " s"};
}

Outcome dale_invariance() {
  // Random tokens with random labels, one Adam step per item.
  Rng rng(2024);
  std::vector<AnnotatedSentence> data;
  for (int i = 0; i < 1000; ++i) {
    AnnotatedSentence s;
    const std::size_t len = 2 + rng.index(6);
    for (std::size_t t = 0; t < len; ++t) s.tokens.push_back("w" + std::to_string(rng.index(30)));
    s.grammatical = rng.bernoulli(0.5);
    data.push_back(s);
  }
  auto mc = ModelConfig::classifier_preset(CellKind::drnn, Task::grammaticality);
  mc.num_layers = 2;
  mc.hidden_dim = 20;
  mc.embedding_dim = 10;
  TrainConfig tc;
  tc.epochs = 1;
  tc.learning_rate = 0.01;
  const auto r = train_classifier(mc, tc, data);
  std::size_t violations = 0, entries = 0;
  for (const auto& layer : r.last.layers) {
    const Tensor w = effective_recurrent_matrix(layer);
    for (std::size_t i = 0; i < w.rows(); ++i) {
      for (std::size_t j = 0; j < w.cols(); ++j) {
        ++entries;
        const double v = w.at(i, j);
        if (v != 0.0 && (v > 0.0) != (layer.dale_signs[j] > 0.0)) ++violations;
      }
    }
  }
  const bool pass = r.history.steps == 1000 && violations == 0;
  return {pass, std::to_string(r.history.steps) + " steps, " + std::to_string(violations) + " sign violations in " +
                    std::to_string(entries) + " entries"};
}

Outcome ema_law() {
  double worst = 0.0;
  Rng rng(5);
  for (CellKind kind : {CellKind::drnn, CellKind::sdrnn, CellKind::abdrnn}) {
    for (int trial = 0; trial < 10; ++trial) {
      InitOptions init;
      init.activation = Activation::identity;
      init.alpha_init = rng.uniform(0.05, 0.95);
      CellParameters p = init_parameters(kind, 4, 2, rng.next(), init);
      if (!p.W.empty()) p.W.fill(0.0);
      p.U.fill(0.0);
      p.b = random_vector(rng, 4, 2.0);
      const double alpha = p.alpha();
      CellState s{random_vector(rng, 4, 3.0), {}};
      const Tensor h0 = s.h;
      const Tensor x = random_vector(rng, 2);
      for (int t = 1; t <= 50; ++t) {
        s = step(p, s, x);
        for (std::size_t i = 0; i < 4; ++i) {
          const double expected = std::pow(alpha, t) * std::fabs(h0[i] - p.b[i]);
          worst = std::max(worst, std::fabs(std::fabs(s.h[i] - p.b[i]) - expected));
        }
      }
    }
  }
  return {worst <= 1e-12, "max deviation " + sci(worst) + " over t <= 50 (DRNN, SDRNN, Ab-DRNN)"};
}

Outcome reductions() {
  Rng rng(11);
  double d1 = 0, d2 = 0, d3 = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t H = 2 + rng.index(9), I = 1 + rng.index(5);
    InitOptions init;
    init.activation = trial % 2 ? Activation::relu : Activation::tanh;
    init.alpha_init = rng.uniform(0.05, 0.95);
    CellParameters p = init_parameters(CellKind::drnn, H, I, rng.next(), init);
    p.b = random_vector(rng, H, 0.5);
    const CellState h{random_vector(rng, H), {}};
    const Tensor x = random_vector(rng, I);

    CellParameters nonneg = p;
    for (double& v : nonneg.W.values()) v = std::fabs(v);
    std::fill(nonneg.dale_signs.begin(), nonneg.dale_signs.end(), 1.0);
    const Tensor a = drnn_step(nonneg, h, x).h, b = sdrnn_step(nonneg, h, x).h;
    CellParameters zero_w = p;
    zero_w.W.fill(0.0);
    const Tensor c = sdrnn_step(zero_w, h, x).h, d = abdrnn_step(zero_w, h, x).h;
    CellParameters no_decay = p;
    no_decay.alpha_logit = Tensor::scalar(-40.0);
    const Tensor e = sdrnn_step(no_decay, h, x).h, f = srn_step(no_decay, h, x).h;
    for (std::size_t i = 0; i < H; ++i) {
      d1 = std::max(d1, std::fabs(a[i] - b[i]));
      d2 = std::max(d2, std::fabs(c[i] - d[i]));
      d3 = std::max(d3, std::fabs(e[i] - f[i]));
    }
  }
  const bool pass = d1 <= 1e-12 && d2 <= 1e-12 && d3 <= 1e-12;
  return {pass, "DRNN=SDRNN " + sci(d1) + ", SDRNN(W=0)=Ab-DRNN " + sci(d2) + ", SDRNN(alpha=sigmoid(-40))=SRN " +
                    sci(d3)};
}

Outcome simple_agreement() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = generate(grammar("simple_agreement"), lexicon(), 1, 2400, 0.5);
  const auto parts = split(corpus, 2000.0 / 2400.0, 0.0, 1);
  bool pass = true;
  std::string detail;
  for (CellKind k : {CellKind::drnn, CellKind::sdrnn, CellKind::lstm}) {
    const auto mc = ModelConfig::classifier_preset(k, Task::number_prediction);
    TrainConfig tc = TrainConfig::classifier_defaults();
    tc.epochs = 10;
    tc.threads = thread_budget();
    const auto r = train_classifier(mc, tc, parts.train, parts.test);
    const double acc = accuracy(r.last, parts.test).accuracy;
    pass = pass && acc >= 0.90;
    detail += std::string(to_string(k)) + " " + num(acc) + "; ";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  pass = pass && secs < 900.0;
  return {pass, detail + std::to_string(parts.train.size()) + " train / " + std::to_string(parts.test.size()) +
                    " held out, 10 epochs, " + num(secs, 1) + " s"};
}

Outcome srn_gap() {
  double drnn_sum = 0.0, srn_sum = 0.0;
  std::string detail;
  const std::uint64_t seeds[] = {1, 2, 3};
  for (std::uint64_t seed : seeds) {
    const auto corpus = generate(grammar("attractors"), lexicon(), seed, 4800, 0.5);
    const auto parts = split(corpus, 1.0 / 1.2, 0.0, 2);
    for (CellKind k : {CellKind::drnn, CellKind::srn}) {
      const auto mc = ModelConfig::classifier_preset(k, Task::grammaticality);
      TrainConfig tc = TrainConfig::classifier_defaults();
      tc.epochs = 15;
      tc.seed = seed;
      tc.threads = thread_budget();
      const auto r = train_classifier(mc, tc, parts.train, parts.test);
      const double acc = accuracy(r.last, parts.test).accuracy;
      (k == CellKind::drnn ? drnn_sum : srn_sum) += acc;
      detail += std::string(to_string(k)) + "@" + std::to_string(seed) + " " + num(acc, 3) + " ";
    }
  }
  const double gap = (drnn_sum - srn_sum) / 3.0;
  return {gap >= 0.10, "mean DRNN " + num(drnn_sum / 3.0) + " vs SRN " + num(srn_sum / 3.0) + " (gap " +
                           num(100.0 * gap, 1) + " points; " + detail + ")"};
}

Outcome lm_sanity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = generate(grammar("targeted"), lexicon(), 1, 2200, 1.0);
  const auto parts = split(corpus, 2000.0 / 2200.0, 200.0 / 2200.0, 1);
  const auto mc = ModelConfig::lm_preset(CellKind::drnn);
  TrainConfig tc = TrainConfig::lm_defaults();
  tc.epochs = 3;
  tc.threads = thread_budget();
  const auto r = train_lm(mc, tc, parts.train, parts.valid);
  const double ppl = perplexity(r.best, parts.valid);
  const double unigram = unigram_perplexity(parts.train, parts.valid);
  double lp = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : parts.valid) {
    lp += lm_logprob(r.best, s.tokens);
    tokens += s.tokens.size();
  }
  const double identity = std::fabs(ppl - std::exp(-lp / static_cast<double>(tokens)));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {ppl < unigram && identity <= 1e-10,
          "validation perplexity " + num(ppl, 2) + " vs unigram " + num(unigram, 2) + ", |ppl - exp(-sum lp / N)| " +
              sci(identity) + ", " + std::to_string(parts.train.size()) + " sentences, " +
              std::to_string(tc.epochs) + " epochs, " + num(secs, 1) + " s"};
}

Outcome targeted_fixture() {
  auto pair = [](const std::string& a, const std::string& b) {
    MinimalPair p;
    p.preferred = tokenize(a);
    p.contrast = tokenize(b);
    p.label = "Simple";
    return p;
  };
  const std::vector<MinimalPair> pairs{pair("the author laughs", "the author laugh"),
                                       pair("the authors laugh", "the authors laughs"),
                                       pair("the guard smiles", "the guard smile"),
                                       pair("the guards smile", "the guards smiles")};
  const std::map<std::string, double> lp{{"the author laughs", -3.0}, {"the author laugh", -4.0},
                                         {"the authors laugh", -4.5}, {"the authors laughs", -5.0},
                                         {"the guard smiles", -2.0},  {"the guard smile", -2.0},
                                         {"the guards smile", -1.0},  {"the guards smiles", -7.0}};
  const auto rows = targeted_eval(pairs, [&](std::span<const std::string> t) {
    std::string s;
    for (const auto& w : t) s += (s.empty() ? "" : " ") + w;
    return lp.at(s);
  });
  const double acc = rows.size() == 1 ? rows[0].accuracy : -1.0;
  return {acc == 0.75, "accuracy " + num(acc, 2) + " (3 of 4 preferred, one tie)"};
}

struct Published {
  std::vector<std::string> models;
  std::vector<std::vector<double>> accuracy;
  std::vector<double> mean_rank;
};

Published published() {
  std::ifstream in(kData / "published_accuracy.tsv");
  if (!in) throw std::runtime_error("missing published_accuracy.tsv");
  Published p;
  std::string line, cell;
  std::getline(in, line);
  std::istringstream head(line);
  std::getline(head, cell, '\t');
  while (std::getline(head, cell, '\t')) p.models.push_back(cell);
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string name;
    std::getline(ls, name, '\t');
    std::vector<double> v;
    while (std::getline(ls, cell, '\t')) v.push_back(std::stod(cell));
    (name == "Mean arithmetic rank" ? p.mean_rank : (p.accuracy.emplace_back(), p.accuracy.back())) = v;
  }
  return p;
}

Outcome rank_check(TieRule rule) {
  const auto p = published();
  const auto ranks = mean_arithmetic_rank(p.accuracy, rule);
  double worst = 0.0;
  std::string detail;
  for (std::size_t m = 0; m < ranks.size(); ++m) {
    const double d = std::fabs(ranks[m] - p.mean_rank[m]);
    worst = std::max(worst, d);
    detail += p.models[m] + " " + num(ranks[m], 3) + "/" + num(p.mean_rank[m], 2) + " ";
  }
  return {worst <= 0.05, "max deviation " + num(worst, 3) + " (" + detail + ")"};
}

Outcome alpha_study() {
  const fs::path dir = work_dir("alpha");
  if (cli({"generate", "--out", (dir / "corpus").string(), "--seed", "5", "--set",
           "grammar=" + (kData / "grammars" / "targeted.tpl").string(), "--set", "count=1000", "--set",
           "train_fraction=1", "--set", "valid_fraction=0"}) != 0) {
    return {false, "corpus generation failed"};
  }
  const std::vector<std::string> args{"alpha-study", "--out", (dir / "study").string(), "--seed", "5", "--force",
                                      "--set", "train=" + (dir / "corpus" / "train.tsv").string(), "--set",
                                      "epochs=3"};
  if (cli(args) != 0) return {false, "first run failed"};
  const auto first = snapshot(dir / "study");
  if (cli(args) != 0) return {false, "second run failed"};
  const bool same = first == snapshot(dir / "study");

  std::istringstream in(first.at("alpha_study_raw.csv"));
  std::string line, cell;
  std::getline(in, line);
  double lo = 1.0, hi = 0.0;
  std::size_t steps = 0;
  std::vector<double> last;
  while (std::getline(in, line)) {
    ++steps;
    std::istringstream ls(line);
    std::getline(ls, cell, ',');
    last.clear();
    while (std::getline(ls, cell, ',')) {
      const double v = std::stod(cell);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      last.push_back(v);
    }
  }
  const bool bounded = steps > 0 && lo > 0.0 && hi < 1.0;
  std::string finals;
  for (double v : last) finals += num(v, 3) + " ";
  return {same && bounded, std::to_string(steps) + " steps per init, range [" + num(lo) + ", " + num(hi) +
                               "], final " + finals + "(inits 0.2 0.5 0.8), CSV rerun " +
                               (same ? "bit-identical" : "DIFFERS")};
}

Outcome determinism() {
  const fs::path dir = work_dir("determinism");
  const std::string g = "grammar=" + (kData / "grammars" / "targeted.tpl").string();
  auto pipeline = [&] {
    std::vector<std::vector<std::string>> steps{
        {"generate", "--out", (dir / "gen").string(), "--seed", "9", "--force", "--set", g, "--set", "count=400",
         "--set", "pairs=60"},
        {"train", "--out", (dir / "cls").string(), "--seed", "9", "--force", "--set",
         "train=" + (dir / "gen" / "train.tsv").string(), "--set", "valid=" + (dir / "gen" / "valid.tsv").string(),
         "--set", "vocab_corpus=" + (dir / "gen" / "corpus.tsv").string() + "," + (dir / "gen" / "pairs.tsv").string(),
         "--set", "epochs=2"},
        {"train", "--out", (dir / "lm").string(), "--seed", "9", "--force", "--set",
         "train=" + (dir / "gen" / "train.tsv").string(), "--set", "valid=" + (dir / "gen" / "valid.tsv").string(),
         "--set", "vocab_corpus=" + (dir / "gen" / "corpus.tsv").string() + "," + (dir / "gen" / "pairs.tsv").string(),
         "--set", "task=language_model", "--set", "hidden_dim=32", "--set", "embedding_dim=16", "--set", "epochs=2",
         "--set", "batch_size=32"},
        {"eval", "--out", (dir / "eval").string(), "--force", "--set",
         "models=cls=" + (dir / "cls" / "best.ckpt").string() + ",lm=" + (dir / "lm" / "best.ckpt").string(),
         "--set", "corpus=" + (dir / "gen" / "test.tsv").string(), "--set",
         "pairs=" + (dir / "gen" / "pairs.tsv").string(), "--set", "stratify_vary=attractors"}};
    for (const auto& s : steps) {
      if (cli(s) != 0) return false;
    }
    return true;
  };
  if (!pipeline()) return {false, "first pipeline run failed"};
  const auto first = snapshot(dir);
  if (!pipeline()) return {false, "second pipeline run failed"};
  const auto second = snapshot(dir);
  std::size_t differing = 0;
  for (const auto& [name, bytes] : first) {
    const auto it = second.find(name);
    differing += it == second.end() || it->second != bytes;
  }
  return {differing == 0 && first.size() == second.size(),
          std::to_string(first.size()) + " files (corpora, checkpoints, histories, reports), " +
              std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::pair<std::string, std::function<Outcome()>>>> criteria{
      {"1", {"gradient oracle", gradient_oracle}},
      {"2", {"Dale invariance after 1000 Adam steps", dale_invariance}},
      {"3", {"exponential moving average law", ema_law}},
      {"4", {"reduction equivalences", reductions}},
      {"5", {"simple-agreement competence", simple_agreement}},
      {"6", {"DRNN over SRN on attractor grammaticality", srn_gap}},
      {"7", {"LM beats unigram, perplexity identity", lm_sanity}},
      {"8a", {"targeted-eval 4-pair fixture", targeted_fixture}},
      {"8b", {"mean arithmetic rank, average ties", [] { return rank_check(TieRule::average); }}},
      {"8c", {"mean arithmetic rank, min ties (observation)", [] { return rank_check(TieRule::min); }}},
      {"9", {"alpha study bounded and reproducible", alpha_study}},
      {"10", {"byte-identical pipeline reruns", determinism}},
  };
  std::vector<std::string> wanted(argv + 1, argv + argc);
  for (const auto& w : wanted) {
    const bool known = std::any_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == w; });
    if (!known) {
      std::cerr << "unknown criterion '" << w << "'\n";
      return 2;
    }
  }
  int failures = 0;
  for (const auto& [id, spec] : criteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), id) == wanted.end()) continue;
    Outcome o;
    try {
      o = spec.second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << id << "] " << spec.first << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
