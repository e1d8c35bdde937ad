#include "drnn/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "drnn/cell_gradcheck.hpp"
#include "drnn/corpus.hpp"
#include "drnn/evaluation.hpp"
#include "drnn/grammar.hpp"
#include "drnn/lexicon.hpp"
#include "drnn/training.hpp"

namespace drnn {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCommands[] = {"generate", "train", "eval", "gradcheck", "alpha-study"};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::pair<std::string, std::string> split_assignment(std::string_view line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) throw ConfigError(where + ": expected key=value, got '" + std::string(line) + "'");
  std::string key = trim(line.substr(0, eq));
  if (key.empty()) throw ConfigError(where + ": empty key");
  return {key, trim(line.substr(eq + 1))};
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

template <typename F>
void write_with(const fs::path& path, F&& fn) {
  std::ostringstream os;
  fn(os);
  write_text(path, os.str());
}

void prepare_output(const RunConfig& c) {
  if (c.out.empty()) throw ConfigError("no output directory; pass --out or set out=");
  if (fs::exists(c.out)) {
    if (!fs::is_directory(c.out)) throw ConfigError("output path " + c.out.string() + " is not a directory");
    if (!fs::is_empty(c.out) && !c.force) {
      throw ConfigError("output directory " + c.out.string() + " is not empty; use --force to overwrite");
    }
  }
  fs::create_directories(c.out);
  write_text(c.out / "resolved_config.txt", c.resolved_text());
}

const fs::path& data_dir() {
  static const fs::path dir = DRNN_DATA_DIR;
  return dir;
}

std::vector<GrammarTemplate> load_grammars(const RunConfig& c, const Lexicon& lex) {
  const auto files = c.get_list("grammar");
  if (files.empty()) throw ConfigError("grammar: at least one grammar file is required");
  std::vector<GrammarTemplate> all;
  for (const auto& f : files) {
    for (auto& t : load_grammar(f, &lex)) all.push_back(std::move(t));
  }
  return all;
}

std::optional<std::string> optional_value(const RunConfig& c, const std::string& key) {
  const auto& v = c.get(key);
  if (v.empty()) return std::nullopt;
  return v;
}

std::vector<AnnotatedSentence> load_corpus_file(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("corpus file not found: " + path);
  return load_corpus(path);
}

std::vector<MinimalPair> load_pairs_file(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("pairs file not found: " + path);
  return load_pairs(path);
}

ModelConfig model_config_from(const RunConfig& c, Task task) {
  const CellKind cell = parse_cell_kind(c.get("cell"));
  ModelConfig m = task == Task::language_model ? ModelConfig::lm_preset(cell) : ModelConfig::classifier_preset(cell, task);
  if (auto v = optional_value(c, "num_layers")) m.num_layers = to_uint("num_layers", *v);
  if (auto v = optional_value(c, "embedding_dim")) m.embedding_dim = to_uint("embedding_dim", *v);
  if (auto v = optional_value(c, "hidden_dim")) m.hidden_dim = to_uint("hidden_dim", *v);
  if (auto v = optional_value(c, "activation")) m.activation = parse_activation(*v);
  if (auto v = optional_value(c, "dropout")) m.dropout = c.get_double("dropout");
  m.alpha_param = parse_alpha_param(c.get("alpha_param"));
  if (auto v = optional_value(c, "inhibitory_shuffle_seed")) {
    m.inhibitory_shuffle_seed = to_uint("inhibitory_shuffle_seed", *v);
  }
  m.validate();
  return m;
}

TrainConfig train_config_from(const RunConfig& c, Task task) {
  TrainConfig t = task == Task::language_model ? TrainConfig::lm_defaults() : TrainConfig::classifier_defaults();
  if (optional_value(c, "learning_rate")) t.learning_rate = c.get_double("learning_rate");
  if (optional_value(c, "batch_size")) t.batch_size = c.get_uint("batch_size");
  if (optional_value(c, "epochs")) t.epochs = c.get_uint("epochs");
  t.clip_norm = c.get_double("clip_norm");
  if (c.values.count("alpha_init")) t.alpha_init = c.get_double("alpha_init");
  t.seed = c.seed;
  t.threads = thread_budget();
  t.validate();
  return t;
}

void require_covered(const Model& model, const std::string& model_name, std::span<const std::string> tokens,
                     const std::string& source) {
  for (const auto& w : tokens) {
    if (!model.vocab.find(w)) {
      throw VocabularyError("vocabulary mismatch: token '" + w + "' in " + source + " is unknown to model " +
                            model_name);
    }
  }
}

bool is_pairs_file(const std::string& path) {
  std::ifstream in(path);
  std::string head;
  std::getline(in, head);
  return head.rfind("preferred\t", 0) == 0;
}

/// Training and validation words plus those of every `vocab_corpus` file
/// (corpus or minimal-pair TSV).
Vocabulary training_vocabulary(const RunConfig& c, const std::vector<AnnotatedSentence>& train_set,
                               const std::vector<AnnotatedSentence>& valid_set) {
  std::vector<std::vector<AnnotatedSentence>> extra;
  for (const auto& f : c.get_list("vocab_corpus")) {
    if (!fs::exists(f)) throw ConfigError("vocabulary file not found: " + f);
    if (!is_pairs_file(f)) {
      extra.push_back(load_corpus(f));
      continue;
    }
    std::vector<AnnotatedSentence> members;
    for (const auto& p : load_pairs(f)) {
      for (const auto* t : {&p.preferred, &p.contrast}) {
        AnnotatedSentence s;
        s.tokens = *t;
        members.push_back(std::move(s));
      }
    }
    extra.push_back(std::move(members));
  }
  std::vector<const std::vector<AnnotatedSentence>*> all{&train_set, &valid_set};
  for (const auto& e : extra) all.push_back(&e);
  return Vocabulary::from_sentences(all);
}

struct NamedModel {
  std::string name;
  Model model;
};

std::vector<NamedModel> load_models(const RunConfig& c) {
  const auto entries = c.get_list("models");
  if (entries.empty()) throw ConfigError("models: at least one checkpoint is required");
  std::vector<NamedModel> out;
  for (const auto& e : entries) {
    const auto eq = e.find('=');
    const std::string path = eq == std::string::npos ? e : e.substr(eq + 1);
    const std::string name = eq == std::string::npos ? fs::path(path).stem().string() : e.substr(0, eq);
    if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path);
    for (const auto& m : out) {
      if (m.name == name) throw ConfigError("models: duplicate name '" + name + "'");
    }
    out.push_back({name, load_model(path)});
  }
  return out;
}

std::vector<std::pair<StratumKey, std::size_t>> parse_fixed(const RunConfig& c) {
  std::vector<std::pair<StratumKey, std::size_t>> out;
  for (const auto& item : c.get_list("stratify_fixed")) {
    const auto [k, v] = split_assignment(item, "stratify_fixed");
    out.emplace_back(parse_stratum_key(k), to_uint("stratify_fixed", v));
  }
  return out;
}

std::vector<double> moving_average(const std::vector<double>& xs, std::size_t window) {
  std::vector<double> out(xs.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sum += xs[i];
    if (i >= window) sum -= xs[i - window];
    out[i] = sum / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) throw ConfigError("unknown setting '" + key + "' for " + command);
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const auto& v = get(key);
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t RunConfig::get_uint(const std::string& key) const { return to_uint(key, get(key)); }

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream is(get(key));
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string RunConfig::resolved_text() const {
  std::map<std::string, std::string> all = values;
  all["command"] = command;
  all["seed"] = std::to_string(seed);
  all["out"] = out.string();
  std::string text;
  for (const auto& [k, v] : all) text += k + "=" + v + "\n";
  return text;
}

std::map<std::string, std::string> parse_config_text(std::string_view text, const std::string& source) {
  std::map<std::string, std::string> out;
  std::istringstream is{std::string(text)};
  std::string line;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    auto [k, v] = split_assignment(line, source + ":" + std::to_string(n));
    out[k] = v;
  }
  return out;
}

const std::map<std::string, std::string>& default_settings(const std::string& command) {
  static const std::map<std::string, std::map<std::string, std::string>> table = [] {
    const std::string lexicon = (data_dir() / "lexicon.tsv").string();
    const std::map<std::string, std::string> model{
        {"cell", "drnn"},        {"num_layers", ""},   {"embedding_dim", ""}, {"hidden_dim", ""},
        {"activation", ""},      {"dropout", ""},      {"alpha_param", "sigmoid"},
        {"inhibitory_shuffle_seed", ""},               {"learning_rate", ""}, {"batch_size", ""},
        {"epochs", ""},          {"clip_norm", "5"},   {"alpha_init", "0.8"}};
    std::map<std::string, std::map<std::string, std::string>> t;
    t["generate"] = {{"grammar", ""},         {"lexicon", lexicon},    {"count", "1000"},
                     {"grammatical_ratio", "0.5"}, {"train_fraction", "0.8"}, {"valid_fraction", "0.1"},
                     {"pairs", "0"}};
    t["train"] = model;
    t["train"].insert({{"train", ""}, {"valid", ""}, {"vocab_corpus", ""}, {"task", "number_prediction"}});
    t["eval"] = {{"models", ""},         {"corpus", ""},    {"pairs", ""},     {"stratify_fixed", ""},
                 {"stratify_vary", ""}, {"min_items", "50"}, {"profile", "false"}};
    t["gradcheck"] = {{"cells", "srn,drnn,sdrnn,ab-drnn,lstm,gru"},
                      {"configs", "20"},
                      {"step", "1e-5"},
                      {"tolerance", "1e-5"},
                      {"inject_sign_flip", "false"}};
    t["alpha-study"] = model;
    t["alpha-study"].insert({{"train", ""}, {"valid", ""}, {"vocab_corpus", ""}, {"inits", "0.2,0.5,0.8"}, {"window", "50"}});
    t["alpha-study"].erase("alpha_init");
    return t;
  }();
  const auto it = table.find(command);
  if (it == table.end()) throw ConfigError("unknown command '" + command + "'");
  return it->second;
}

RunConfig resolve_config(const std::string& command, const fs::path& config_file,
                         std::span<const std::string> overrides, std::optional<std::uint64_t> seed,
                         std::optional<fs::path> out, bool force) {
  RunConfig c;
  c.command = command;
  c.values = default_settings(command);
  c.force = force;
  auto apply = [&](const std::string& k, const std::string& v, const std::string& where) {
    if (k == "seed") {
      c.seed = to_uint("seed", v);
    } else if (k == "out") {
      c.out = v;
    } else if (c.values.count(k)) {
      c.values[k] = v;
    } else {
      throw ConfigError(where + ": unknown setting '" + k + "' for " + command);
    }
  };
  if (!config_file.empty()) {
    std::ifstream in(config_file);
    if (!in) throw ConfigError("cannot read config file " + config_file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    for (const auto& [k, v] : parse_config_text(ss.str(), config_file.string())) apply(k, v, config_file.string());
  }
  for (const auto& o : overrides) {
    const auto [k, v] = split_assignment(o, "--set");
    apply(k, v, "--set");
  }
  if (seed) c.seed = *seed;
  if (out) c.out = *out;
  return c;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_generate(const RunConfig& c, std::ostream& log) {
  const Lexicon lex = Lexicon::load(c.get("lexicon"));
  const auto templates = load_grammars(c, lex);
  const double ratio = c.get_double("grammatical_ratio");
  const double tf = c.get_double("train_fraction"), vf = c.get_double("valid_fraction");
  const std::size_t count = c.get_uint("count"), pairs = c.get_uint("pairs");
  if (ratio < 0 || ratio > 1) throw ConfigError("grammatical_ratio must lie in [0, 1]");
  if (tf < 0 || vf < 0 || tf + vf > 1) throw ConfigError("train_fraction and valid_fraction must be >= 0 with sum <= 1");
  prepare_output(c);
  const auto corpus = generate(templates, lex, c.seed, count, ratio);
  const auto parts = split(corpus, tf, vf, c.seed);
  save_corpus(c.out / "corpus.tsv", corpus);
  save_corpus(c.out / "train.tsv", parts.train);
  save_corpus(c.out / "valid.tsv", parts.valid);
  save_corpus(c.out / "test.tsv", parts.test);
  if (pairs > 0) save_pairs(c.out / "pairs.tsv", generate_minimal_pairs(templates, lex, c.seed, pairs));
  log << "generated " << corpus.size() << " sentences (" << parts.train.size() << " train, " << parts.valid.size()
      << " valid, " << parts.test.size() << " test)\n";
  return 0;
}

int cmd_train(const RunConfig& c, std::ostream& log) {
  const Task task = parse_task(c.get("task"));
  const auto mc = model_config_from(c, task);
  const auto tc = train_config_from(c, task);
  if (c.get("train").empty()) throw ConfigError("train: a training corpus is required");
  const auto train_set = load_corpus_file(c.get("train"));
  const auto valid_set = c.get("valid").empty() ? std::vector<AnnotatedSentence>{} : load_corpus_file(c.get("valid"));
  prepare_output(c);
  const auto r = train(init_model(mc, training_vocabulary(c, train_set, valid_set), tc.seed, tc.alpha_init), tc,
                       train_set, valid_set);
  save_model(c.out / "last.ckpt", r.last);
  save_model(c.out / "best.ckpt", r.best);
  write_with(c.out / "history.csv", [&](std::ostream& os) { write_history_csv(os, r.history); });
  log << "trained " << to_string(mc.cell) << " " << to_string(task) << " for " << tc.epochs << " epochs ("
      << r.history.steps << " steps)";
  if (!r.history.valid_metric.empty() && !std::isnan(r.history.valid_metric.back())) {
    log << ", final validation " << r.history.metric_name << " " << format_double(r.history.valid_metric.back());
  }
  log << "\n";
  return 0;
}

int cmd_eval(const RunConfig& c, std::ostream& log) {
  const auto models = load_models(c);
  const std::vector<AnnotatedSentence> corpus =
      c.get("corpus").empty() ? std::vector<AnnotatedSentence>{} : load_corpus_file(c.get("corpus"));
  const std::vector<MinimalPair> pairs = c.get("pairs").empty() ? std::vector<MinimalPair>{} : load_pairs_file(c.get("pairs"));
  if (corpus.empty() && pairs.empty()) throw ConfigError("eval needs a corpus or a pairs file");
  const auto fixed = parse_fixed(c);
  const std::string vary = c.get("stratify_vary");
  const std::size_t min_items = c.get_uint("min_items");
  const bool profile = c.get_bool("profile");
  for (const auto& m : models) {
    for (const auto& s : corpus) require_covered(m.model, m.name, s.tokens, c.get("corpus"));
    for (const auto& p : pairs) {
      require_covered(m.model, m.name, p.preferred, c.get("pairs"));
      require_covered(m.model, m.name, p.contrast, c.get("pairs"));
    }
  }
  prepare_output(c);

  std::vector<ModelColumn> columns;
  for (const auto& [name, model] : models) {
    const fs::path dir = c.out / name;
    fs::create_directories(dir);
    if (model.config.task == Task::language_model) {
      ModelColumn col{name, {}, std::nullopt};
      if (!corpus.empty()) {
        const double lp = corpus_logprob(model, corpus);
        const std::size_t n = token_count(corpus);
        col.perplexity = perplexity_from_logprob(lp, n);
        write_with(dir / "perplexity.csv", [&](std::ostream& os) {
          os << "tokens,logprob,perplexity\n" << n << ',' << format_double(lp) << ',' << format_double(*col.perplexity)
             << '\n';
        });
        log << name << ": perplexity " << format_double(*col.perplexity) << "\n";
      }
      if (!pairs.empty()) {
        col.rows = targeted_eval(model, pairs);
        write_with(dir / "targeted.csv", [&](std::ostream& os) { write_targeted_csv(os, col.rows); });
      }
      columns.push_back(std::move(col));
      continue;
    }
    if (!corpus.empty()) {
      std::vector<AccuracyRow> rows{accuracy(model, corpus, "all")};
      std::vector<std::string> names;
      for (const auto& s : corpus) {
        if (std::find(names.begin(), names.end(), s.template_name) == names.end()) names.push_back(s.template_name);
      }
      for (const auto& t : names) {
        std::vector<AnnotatedSentence> part;
        for (const auto& s : corpus) {
          if (s.template_name == t) part.push_back(s);
        }
        rows.push_back(accuracy(model, part, t));
        if (profile && model.config.task == Task::number_prediction) {
          write_with(dir / ("profile_" + t + ".csv"),
                     [&](std::ostream& os) { write_profile_csv(os, confidence_profile(model, part)); });
        }
      }
      write_with(dir / "accuracy.csv", [&](std::ostream& os) { write_accuracy_csv(os, rows); });
      log << name << ": accuracy " << format_double(rows[0].accuracy) << " on " << rows[0].n_items << " sentences\n";
      if (!vary.empty()) {
        const auto table = stratified_accuracy(model, corpus, fixed, parse_stratum_key(vary), min_items);
        write_with(dir / "stratified.csv", [&](std::ostream& os) { write_stratified_csv(os, table); });
      }
    }
    if (!pairs.empty() && model.config.task == Task::grammaticality) {
      const auto rows = grammaticality_generalization(model, pairs);
      write_with(dir / "generalization.csv", [&](std::ostream& os) { write_accuracy_csv(os, rows); });
    }
  }
  if (!columns.empty()) {
    write_with(c.out / "report.txt", [&](std::ostream& os) {
      write_targeted_table(os, columns, TieRule::average);
    });
  }
  return 0;
}

int cmd_gradcheck(const RunConfig& c, std::ostream& log) {
  GradcheckOptions o;
  o.configs = c.get_uint("configs");
  o.step = c.get_double("step");
  o.tolerance = c.get_double("tolerance");
  o.seed = c.seed;
  o.inject_sign_flip = c.get_bool("inject_sign_flip");
  std::vector<CellKind> kinds;
  for (const auto& k : c.get_list("cells")) kinds.push_back(parse_cell_kind(k));
  if (kinds.empty()) throw ConfigError("cells: at least one cell kind is required");
  prepare_output(c);
  std::ostringstream report;
  bool all = true;
  for (CellKind k : kinds) {
    const auto r = gradcheck_cell(k, o);
    all = all && r.passed;
    report << to_string(k) << ' ' << (r.passed ? "PASS" : "FAIL") << " configs=" << r.configs_checked
           << " max_rel_err=" << format_double(r.max_relative_error) << '\n';
    for (const auto& p : r.parameters) {
      report << "  " << p.name << " max_rel_err=" << format_double(p.max_relative_error)
             << " coordinates=" << p.coordinates << '\n';
    }
  }
  write_text(c.out / "gradcheck.txt", report.str());
  log << report.str();
  return all ? 0 : 1;
}

int cmd_alpha_study(const RunConfig& c, std::ostream& log) {
  const auto mc = model_config_from(c, Task::grammaticality);
  if (!has_decay(mc.cell)) throw ConfigError("cell " + std::string(to_string(mc.cell)) + " has no decay factor");
  TrainConfig tc = train_config_from(c, Task::grammaticality);
  std::vector<double> inits;
  for (const auto& s : c.get_list("inits")) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !(v > 0 && v < 1)) {
      throw ConfigError("inits: each value must lie in (0, 1), got '" + s + "'");
    }
    inits.push_back(v);
  }
  if (inits.empty()) throw ConfigError("inits: at least one initialization is required");
  const std::size_t window = c.get_uint("window");
  if (window == 0) throw ConfigError("window must be at least 1");
  if (c.get("train").empty()) throw ConfigError("train: a training corpus is required");
  const auto train_set = load_corpus_file(c.get("train"));
  const auto valid_set = c.get("valid").empty() ? std::vector<AnnotatedSentence>{} : load_corpus_file(c.get("valid"));
  const Vocabulary vocab = training_vocabulary(c, train_set, valid_set);
  prepare_output(c);

  std::vector<std::vector<double>> raw;
  for (double a : inits) {
    tc.alpha_init = a;
    const auto r = train(init_model(mc, vocab, tc.seed, tc.alpha_init), tc, train_set, valid_set);
    std::vector<double> traj;
    for (const auto& step : r.history.step_alpha) traj.push_back(step.at(0));
    log << "alpha init " << format_double(a) << ": final " << format_double(traj.empty() ? a : traj.back()) << "\n";
    raw.push_back(std::move(traj));
  }
  auto write_table = [&](const fs::path& path, bool smooth) {
    write_with(path, [&](std::ostream& os) {
      os << "step";
      for (double a : inits) os << ",alpha_init_" << format_double(a);
      os << '\n';
      std::vector<std::vector<double>> cols;
      for (const auto& t : raw) cols.push_back(smooth ? moving_average(t, window) : t);
      for (std::size_t s = 0; s < cols[0].size(); ++s) {
        os << s + 1;
        for (const auto& col : cols) os << ',' << format_double(col[s]);
        os << '\n';
      }
    });
  };
  write_table(c.out / "alpha_study.csv", true);
  write_table(c.out / "alpha_study_raw.csv", false);
  return 0;
}

// ---------------------------------------------------------------------------
// Front door

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Decay RNN lab: corpora, training and evaluation", "drnn"};
  app.require_subcommand(1);
  struct Flags {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    bool force = false;
    std::vector<std::string> sets;
  };
  std::map<std::string, Flags> flags;
  const std::map<std::string, std::string> help{
      {"generate", "Generate a corpus (and optional minimal pairs) from template grammars"},
      {"train", "Train a classifier or language model"},
      {"eval", "Evaluate checkpoints on a corpus and/or minimal pairs"},
      {"gradcheck", "Compare analytic and finite-difference gradients per cell kind"},
      {"alpha-study", "Track the decay factor during training from several initializations"}};
  std::map<std::string, CLI::App*> subs;
  for (const char* name : kCommands) {
    auto* sub = app.add_subcommand(name, help.at(name));
    Flags& f = flags[name];
    sub->add_option("--config", f.config, "key=value settings file");
    sub->add_option("--seed", f.seed, "random seed");
    sub->add_option("--out", f.out, "output directory");
    sub->add_flag("--force", f.force, "write into a non-empty output directory");
    sub->add_option("--set", f.sets, "override one setting, key=value (repeatable)")->allow_extra_args(false);
    subs[name] = sub;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  std::string command;
  for (const char* name : kCommands) {
    if (subs[name]->parsed()) command = name;
  }
  const Flags& f = flags[command];
  const auto* sub = subs[command];
  try {
    const RunConfig c = resolve_config(command, f.config, f.sets,
                                       sub->count("--seed") ? std::optional<std::uint64_t>(f.seed) : std::nullopt,
                                       sub->count("--out") ? std::optional<fs::path>(f.out) : std::nullopt, f.force);
    if (command == "generate") return cmd_generate(c, out);
    if (command == "train") return cmd_train(c, out);
    if (command == "eval") return cmd_eval(c, out);
    if (command == "gradcheck") return cmd_gradcheck(c, out);
    return cmd_alpha_study(c, out);
  } catch (const ConfigError& e) {
    err << "drnn " << command << ": configuration error: " << e.what() << "\n";
    return 2;
  } catch (const GrammarError& e) {
    err << "drnn " << command << ": grammar error: " << e.what() << "\n";
    return 2;
  } catch (const LexiconError& e) {
    err << "drnn " << command << ": lexicon error: " << e.what() << "\n";
    return 2;
  } catch (const CorpusError& e) {
    err << "drnn " << command << ": corpus error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "drnn " << command << ": invalid setting: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "drnn " << command << ": " << e.what() << "\n";
    return 1;
  }
}

}  // namespace drnn
