#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "drnn/cli.hpp"
#include "drnn/corpus.hpp"

using namespace drnn;
namespace fs = std::filesystem;

namespace {

const std::string kData = DRNN_DATA_DIR;
const fs::path kTmp = fs::path(DRNN_TEST_TMP) / "cli";

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh(const std::string& name) {
  const fs::path p = kTmp / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

std::string grammar(const std::string& name) { return "grammar=" + kData + "/grammars/" + name + ".tpl"; }

// Shared corpus for train/eval cases.
const fs::path& corpus_dir() {
  static const fs::path dir = [] {
    const fs::path d = fresh("corpus");
    const auto r = invoke({"generate", "--out", d.string(), "--seed", "3", "--set", grammar("targeted"), "--set",
                         "count=150", "--set", "pairs=30"});
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

std::vector<std::string> small_lm(const fs::path& out) {
  const auto& c = corpus_dir();
  return {"train", "--out", out.string(), "--set", "train=" + (c / "train.tsv").string(), "--set",
          "valid=" + (c / "valid.tsv").string(), "--set",
          "vocab_corpus=" + (c / "corpus.tsv").string() + "," + (c / "pairs.tsv").string(), "--set",
          "task=language_model", "--set", "hidden_dim=12", "--set", "embedding_dim=6", "--set", "epochs=2",
          "--set", "batch_size=16"};
}

}  // namespace

TEST_CASE("config resolution: defaults, file, flags, diagnostics") {
  const fs::path cfg = fresh("cfg") / "gen.cfg";
  fs::create_directories(cfg.parent_path());
  std::ofstream(cfg) << "# corpus settings\ncount = 12\nseed=5\n\ngrammatical_ratio=0.25  # mostly bad\n";
  const std::vector<std::string> sets{"count=30"};
  const auto c = resolve_config("generate", cfg, sets, std::nullopt, fs::path("o"), false);
  CHECK(c.get("count") == "30");
  CHECK(c.get("grammatical_ratio") == "0.25");
  CHECK(c.seed == 5);
  CHECK(c.get("valid_fraction") == "0.1");
  const auto flagged = resolve_config("generate", cfg, {}, 9, fs::path("o"), false);
  CHECK(flagged.seed == 9);
  CHECK(flagged.resolved_text().find("command=generate\ncount=12\n") == 0);
  CHECK(flagged.resolved_text().find("\nseed=9\n") != std::string::npos);

  CHECK_THROWS_WITH_AS(parse_config_text("a=1\nnot an assignment\n", "x.cfg"), doctest::Contains("x.cfg:2"),
                       ConfigError);
  const std::vector<std::string> bad{"colour=red"};
  CHECK_THROWS_AS(resolve_config("generate", {}, bad, std::nullopt, std::nullopt, false), ConfigError);
  CHECK_THROWS_AS(default_settings("fly"), ConfigError);
}

TEST_CASE("generate: outputs, golden corpus, refusal without --force") {
  const fs::path out = fresh("golden");
  auto r = invoke({"generate", "--out", out.string(), "--seed", "7", "--set", grammar("simple_agreement"), "--set",
                 "count=40"});
  REQUIRE(r.code == 0);
  for (const char* f : {"corpus.tsv", "train.tsv", "valid.tsv", "test.tsv", "resolved_config.txt"}) {
    CHECK(fs::exists(out / f));
  }
  CHECK_FALSE(fs::exists(out / "pairs.tsv"));
  CHECK(slurp(out / "corpus.tsv") == slurp(fs::path(DRNN_GOLDEN_DIR) / "simple_agreement_seed7.tsv"));
  CHECK(load_corpus(out / "train.tsv").size() == 32);

  r = invoke({"generate", "--out", out.string(), "--seed", "7", "--set", grammar("simple_agreement")});
  CHECK(r.code == 2);
  CHECK(r.err.find("--force") != std::string::npos);
  r = invoke({"generate", "--out", out.string(), "--seed", "7", "--force", "--set", grammar("simple_agreement"),
            "--set", "count=40"});
  CHECK(r.code == 0);
  CHECK(slurp(out / "corpus.tsv") == slurp(fs::path(DRNN_GOLDEN_DIR) / "simple_agreement_seed7.tsv"));
}

TEST_CASE("generate: configuration and parse errors exit 2") {
  const fs::path dir = fresh("bad");
  fs::create_directories(dir);
  std::ofstream(dir / "broken.tpl") << "template t sv_agreement short\nS -> the @noun[slot=SUBJ\nend\n";
  auto r = invoke({"generate", "--out", (dir / "o1").string(), "--set", "grammar=" + (dir / "broken.tpl").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("broken.tpl:2") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "o1"));

  CHECK(invoke({"generate", "--out", (dir / "o2").string(), "--set", "count=many", "--set", grammar("targeted")}).code == 2);
  CHECK(invoke({"generate", "--out", (dir / "o3").string(), "--set", "grammatical_ratio=1.5", "--set",
              grammar("targeted")}).code == 2);
  CHECK(invoke({"generate", "--out", (dir / "o4").string()}).code == 2);
  CHECK(invoke({"generate", "--set", grammar("targeted")}).code == 2);
  CHECK(invoke({"generate", "--bogus"}).code == 2);
  CHECK(invoke({}).code == 2);
  CHECK(invoke({"--help"}).code == 0);
}

TEST_CASE("train: deterministic checkpoints, thread independence, smoke time") {
  const fs::path a = fresh("lm_a"), b = fresh("lm_b"), t3 = fresh("lm_t3");
  REQUIRE(invoke(small_lm(a)).code == 0);
  REQUIRE(invoke(small_lm(b)).code == 0);
  for (const char* f : {"last.ckpt", "best.ckpt", "history.csv", "resolved_config.txt"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(a / f));
    if (std::string(f) != "resolved_config.txt") CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(slurp(a / "history.csv").rfind("epoch,loss,perplexity,alpha_layer0,alpha_layer1\n", 0) == 0);

  ::setenv("DRNN_THREADS", "3", 1);
  const auto r = invoke(small_lm(t3));
  ::unsetenv("DRNN_THREADS");
  REQUIRE(r.code == 0);
  CHECK(slurp(a / "last.ckpt") == slurp(t3 / "last.ckpt"));

  const fs::path smoke = fresh("smoke");
  const fs::path gen = fresh("smoke_corpus");
  REQUIRE(invoke({"generate", "--out", gen.string(), "--set", grammar("simple_agreement"), "--set", "count=50",
                "--set", "train_fraction=1", "--set", "valid_fraction=0"})
              .code == 0);
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = invoke({"train", "--out", smoke.string(), "--set", "train=" + (gen / "train.tsv").string()});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(s.code == 0);
  CHECK(secs < 60.0);

  CHECK(invoke({"train", "--out", fresh("t_bad").string(), "--set", "train=/no/such.tsv"}).code == 2);
  CHECK(invoke({"train", "--out", fresh("t_bad2").string(), "--set", "train=" + (gen / "train.tsv").string(),
              "--set", "cell=transformer"})
            .code == 2);
  CHECK(invoke({"train", "--out", fresh("t_bad3").string(), "--set", "train=" + (gen / "train.tsv").string(),
              "--set", "learning_rate=0"})
            .code == 2);
}

TEST_CASE("eval: report shape, byte-identical reruns, vocabulary refusal") {
  const auto& c = corpus_dir();
  const fs::path lm = fresh("ev_lm");
  REQUIRE(invoke(small_lm(lm)).code == 0);
  const fs::path cls = fresh("ev_cls");
  REQUIRE(invoke({"train", "--out", cls.string(), "--set", "train=" + (c / "train.tsv").string(), "--set",
                "vocab_corpus=" + (c / "corpus.tsv").string() + "," + (c / "pairs.tsv").string(), "--set",
                "task=grammaticality", "--set", "epochs=1"})
              .code == 0);
  auto eval = [&](const fs::path& out) {
    return invoke({"eval", "--out", out.string(), "--set",
                 "models=DRNN=" + (lm / "best.ckpt").string() + ",judge=" + (cls / "best.ckpt").string(), "--set",
                 "corpus=" + (c / "test.tsv").string(), "--set", "pairs=" + (c / "pairs.tsv").string(), "--set",
                 "stratify_vary=attractors", "--set", "min_items=1"});
  };
  const fs::path e1 = fresh("ev1"), e2 = fresh("ev2");
  REQUIRE(eval(e1).code == 0);
  REQUIRE(eval(e2).code == 0);
  const std::string report = slurp(e1 / "report.txt");
  CHECK(report == slurp(e2 / "report.txt"));
  CHECK(report.rfind("Phenomenon", 0) == 0);
  CHECK(report.find("\nSimple ") != std::string::npos);
  CHECK(report.find("NPI simple (grammatical vs. intrusive)") != std::string::npos);
  CHECK(report.find("\nMean arithmetic rank ") != std::string::npos);
  CHECK(report.find("\nValidation perplexity ") != std::string::npos);
  for (const char* f : {"DRNN/targeted.csv", "DRNN/perplexity.csv", "judge/accuracy.csv", "judge/stratified.csv",
                        "judge/generalization.csv"}) {
    CAPTURE(f);
    CHECK(slurp(e1 / f) == slurp(e2 / f));
  }

  // A model whose vocabulary misses corpus words is refused.
  const fs::path narrow = fresh("ev_narrow");
  REQUIRE(invoke({"train", "--out", narrow.string(), "--set", "train=" + (c / "valid.tsv").string(), "--set",
                "task=language_model", "--set", "hidden_dim=4", "--set", "embedding_dim=4", "--set", "epochs=1"})
              .code == 0);
  const auto r = invoke({"eval", "--out", fresh("ev3").string(), "--set", "models=" + (narrow / "last.ckpt").string(),
                       "--set", "corpus=" + (c / "corpus.tsv").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("vocabulary mismatch") != std::string::npos);
  CHECK(invoke({"eval", "--out", fresh("ev4").string(), "--set", "models=" + (lm / "best.ckpt").string()}).code == 2);
}

TEST_CASE("gradcheck: pass, injected sign flip fails, per-parameter report") {
  const fs::path ok = fresh("gc_ok");
  auto r = invoke({"gradcheck", "--out", ok.string(), "--set", "configs=2"});
  CHECK(r.code == 0);
  const std::string text = slurp(ok / "gradcheck.txt");
  for (const char* k : {"srn PASS", "drnn PASS", "sdrnn PASS", "abdrnn PASS", "lstm PASS", "gru PASS"}) {
    CHECK(text.find(k) != std::string::npos);
  }
  CHECK(text.find("  alpha_logit max_rel_err=") != std::string::npos);

  r = invoke({"gradcheck", "--out", fresh("gc_bad").string(), "--set", "configs=2", "--set", "cells=drnn", "--set",
            "inject_sign_flip=true"});
  CHECK(r.code == 1);
  CHECK(r.out.find("drnn FAIL") != std::string::npos);
}

TEST_CASE("alpha-study: one column per init, bounded, deterministic") {
  const auto& c = corpus_dir();
  auto study = [&](const fs::path& out) {
    return invoke({"alpha-study", "--out", out.string(), "--seed", "4", "--set",
                 "train=" + (c / "train.tsv").string(), "--set", "epochs=1", "--set", "window=5"});
  };
  const fs::path a = fresh("as_a"), b = fresh("as_b");
  REQUIRE(study(a).code == 0);
  REQUIRE(study(b).code == 0);
  const std::string csv = slurp(a / "alpha_study.csv");
  CHECK(csv == slurp(b / "alpha_study.csv"));
  CHECK(slurp(a / "alpha_study_raw.csv") == slurp(b / "alpha_study_raw.csv"));
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,alpha_init_0.2,alpha_init_0.5,alpha_init_0.8");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    while (std::getline(ls, cell, ',')) {
      const double v = std::stod(cell);
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
  CHECK(rows == load_corpus(c / "train.tsv").size());

  CHECK(invoke({"alpha-study", "--out", fresh("as_bad").string(), "--set", "train=" + (c / "train.tsv").string(),
              "--set", "cell=lstm"})
            .code == 2);
  CHECK(invoke({"alpha-study", "--out", fresh("as_bad2").string(), "--set", "train=" + (c / "train.tsv").string(),
              "--set", "inits=0.5,1.2"})
            .code == 2);
}
