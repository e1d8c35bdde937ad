#include "drnn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>

namespace drnn {

namespace {

std::vector<double> map_sentences(std::size_t n, const std::function<double(std::size_t)>& fn) {
  std::vector<double> out(n);
  constexpr std::size_t kShards = 32;
  const std::size_t shards = std::min(kShards, n);
  parallel_for(shards, thread_budget(), [&](std::size_t c) {
    for (std::size_t k = n * c / shards; k < n * (c + 1) / shards; ++k) out[k] = fn(k);
  });
  return out;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

double accuracy_from_probabilities(std::span<const double> p_correct) {
  if (p_correct.empty()) throw EvaluationError("accuracy of an empty set");
  std::size_t correct = 0;
  for (double p : p_correct) correct += p > 0.5;
  return static_cast<double>(correct) / static_cast<double>(p_correct.size());
}

std::vector<double> correct_probabilities(const Model& model, std::span<const AnnotatedSentence> corpus) {
  const Task task = model.config.task;
  if (task == Task::language_model) throw std::invalid_argument("accuracy needs a classifier model");
  return map_sentences(corpus.size(), [&](std::size_t k) {
    const auto& s = corpus[k];
    const auto p = classifier_curve(model, classifier_input(s, task)).back();
    return p[classifier_target(s, task)];
  });
}

AccuracyRow accuracy(const Model& model, std::span<const AnnotatedSentence> corpus, const std::string& name) {
  const auto p = correct_probabilities(model, corpus);
  return {name, accuracy_from_probabilities(p), p.size()};
}

// ---------------------------------------------------------------------------
// Stratified accuracy

std::string_view to_string(StratumKey key) {
  switch (key) {
    case StratumKey::distance: return "distance";
    case StratumKey::attractor_count: return "attractors";
    case StratumKey::non_attractor_count: return "non_attractors";
  }
  return "?";
}

StratumKey parse_stratum_key(std::string_view name) {
  for (StratumKey k : {StratumKey::distance, StratumKey::attractor_count, StratumKey::non_attractor_count}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown stratum key '" + std::string(name) + "'");
}

std::size_t stratum_value(const AnnotatedSentence& s, StratumKey key) {
  switch (key) {
    case StratumKey::distance: return s.distance;
    case StratumKey::attractor_count: return s.attractor_count;
    case StratumKey::non_attractor_count: return s.non_attractor_count;
  }
  return 0;
}

StratifiedTable stratify(std::span<const AnnotatedSentence> corpus, const std::vector<bool>& correct,
                         std::vector<std::pair<StratumKey, std::size_t>> fixed, StratumKey vary,
                         std::size_t min_items) {
  if (correct.size() != corpus.size()) throw std::invalid_argument("stratify: size mismatch");
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const bool match = std::all_of(fixed.begin(), fixed.end(), [&](const auto& f) {
      return stratum_value(corpus[i], f.first) == f.second;
    });
    if (!match) continue;
    auto& [n, c] = groups[stratum_value(corpus[i], vary)];
    ++n;
    c += correct[i];
  }
  StratifiedTable t{std::move(fixed), vary, min_items, {}};
  for (const auto& [value, nc] : groups) {
    StratumCell cell{value, nc.first, std::nullopt};
    if (nc.first >= min_items && nc.first > 0) {
      cell.accuracy = static_cast<double>(nc.second) / static_cast<double>(nc.first);
    }
    t.cells.push_back(cell);
  }
  return t;
}

StratifiedTable stratified_accuracy(const Model& model, std::span<const AnnotatedSentence> corpus,
                                    std::vector<std::pair<StratumKey, std::size_t>> fixed, StratumKey vary,
                                    std::size_t min_items) {
  const auto p = correct_probabilities(model, corpus);
  std::vector<bool> correct(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) correct[i] = p[i] > 0.5;
  return stratify(corpus, correct, std::move(fixed), vary, min_items);
}

void write_stratified_csv(std::ostream& os, const StratifiedTable& table) {
  os << to_string(table.vary) << ",n,accuracy\n";
  for (const auto& c : table.cells) {
    os << c.value << ',' << c.n_items << ',' << (c.accuracy ? format_double(*c.accuracy) : "") << '\n';
  }
}

// ---------------------------------------------------------------------------
// Confidence profiles

ConfidenceProfile confidence_profile(const Model& model, std::span<const AnnotatedSentence> corpus) {
  if (model.config.task != Task::number_prediction) {
    throw std::invalid_argument("confidence_profile needs a number-prediction model");
  }
  if (corpus.empty()) throw EvaluationError("confidence profile of an empty corpus");
  const std::size_t len = corpus[0].tokens.size();
  for (const auto& s : corpus) {
    if (s.template_name != corpus[0].template_name) {
      throw EvaluationError("confidence profile mixes templates '" + corpus[0].template_name + "' and '" +
                            s.template_name + "'");
    }
    if (s.tokens.size() != len) {
      throw EvaluationError("confidence profile needs equal-length sentences: '" + s.text() + "'");
    }
  }
  std::vector<std::vector<double>> curves(corpus.size());
  parallel_for(corpus.size(), thread_budget(), [&](std::size_t k) {
    const auto& s = corpus[k];
    const std::size_t target = classifier_target(s, Task::number_prediction);
    for (const auto& p : classifier_curve(model, s.tokens)) curves[k].push_back(p[target]);
  });
  ConfidenceProfile out{corpus[0].template_name, {}};
  for (std::size_t t = 0; t < len; ++t) {
    double sum = 0.0;
    for (const auto& c : curves) sum += c[t];
    std::string label = "pos" + std::to_string(t);
    if (t == corpus[0].subject_index) label = "subject";
    if (t == corpus[0].verb_index) label = "verb";
    out.points.push_back({label, corpus[0].tokens[t], sum / static_cast<double>(corpus.size()), corpus.size()});
  }
  return out;
}

void write_profile_csv(std::ostream& os, const ConfidenceProfile& profile) {
  os << "position,label,example,mean,n\n";
  for (std::size_t i = 0; i < profile.points.size(); ++i) {
    const auto& p = profile.points[i];
    os << i << ',' << csv_field(p.label) << ',' << csv_field(p.example) << ',' << format_double(p.mean) << ','
       << p.n << '\n';
  }
}

// ---------------------------------------------------------------------------
// Perplexity

double perplexity_from_logprob(double total_logprob, std::size_t count) {
  if (count == 0) throw EvaluationError("perplexity of an empty corpus");
  return std::exp(-total_logprob / static_cast<double>(count));
}

double corpus_logprob(const Model& model, std::span<const AnnotatedSentence> corpus) {
  const auto lp = map_sentences(corpus.size(), [&](std::size_t k) { return lm_logprob(model, corpus[k].tokens); });
  double total = 0.0;
  for (double v : lp) total += v;
  return total;
}

std::size_t token_count(std::span<const AnnotatedSentence> corpus) {
  std::size_t n = 0;
  for (const auto& s : corpus) n += s.tokens.size();
  return n;
}

double perplexity(const Model& model, std::span<const AnnotatedSentence> corpus) {
  return perplexity_from_logprob(corpus_logprob(model, corpus), token_count(corpus));
}

double unigram_perplexity(std::span<const AnnotatedSentence> train, std::span<const AnnotatedSentence> eval) {
  std::map<std::string, std::size_t, std::less<>> counts;
  for (const auto* part : {&train, &eval}) {
    for (const auto& s : *part) {
      for (const auto& w : s.tokens) counts.emplace(w, 0);
    }
  }
  std::size_t total = 0;
  for (const auto& s : train) {
    for (const auto& w : s.tokens) {
      ++counts[w];
      ++total;
    }
  }
  const double denom = static_cast<double>(total + counts.size());
  double lp = 0.0;
  for (const auto& s : eval) {
    for (const auto& w : s.tokens) lp += std::log(static_cast<double>(counts.find(w)->second + 1) / denom);
  }
  return perplexity_from_logprob(lp, token_count(eval));
}

// ---------------------------------------------------------------------------
// Targeted evaluation

std::string TargetedRow::row_name() const {
  if (phenomenon != Phenomenon::npi) return label;
  return label + " (" + std::string(to_string(preferred_kind)) + " vs. " + std::string(to_string(contrast_kind)) +
         ")";
}

std::vector<TargetedRow> targeted_eval(std::span<const MinimalPair> pairs, const SentenceScorer& score) {
  if (pairs.empty()) throw EvaluationError("targeted evaluation of an empty pair list");
  const auto wins = map_sentences(pairs.size(), [&](std::size_t k) {
    return score(pairs[k].preferred) > score(pairs[k].contrast) ? 1.0 : 0.0;
  });
  std::vector<TargetedRow> rows;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& p = pairs[k];
    auto it = std::find_if(rows.begin(), rows.end(), [&](const TargetedRow& r) {
      return r.label == p.label && r.phenomenon == p.phenomenon && r.range == p.range &&
             r.preferred_kind == p.preferred_kind && r.contrast_kind == p.contrast_kind;
    });
    if (it == rows.end()) {
      rows.push_back({p.label, p.phenomenon, p.range, p.preferred_kind, p.contrast_kind, 0, 0, 0.0});
      it = rows.end() - 1;
    }
    ++it->n_items;
    it->correct += wins[k] > 0.0;
  }
  for (auto& r : rows) r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.n_items);
  return rows;
}

std::vector<TargetedRow> targeted_eval(const Model& model, std::span<const MinimalPair> pairs) {
  return targeted_eval(pairs, [&](std::span<const std::string> t) { return lm_logprob(model, t); });
}

void write_targeted_csv(std::ostream& os, std::span<const TargetedRow> rows) {
  os << "row,phenomenon,range,correct,n,accuracy\n";
  for (const auto& r : rows) {
    os << csv_field(r.row_name()) << ',' << to_string(r.phenomenon) << ',' << to_string(r.range) << ','
       << r.correct << ',' << r.n_items << ',' << format_double(r.accuracy) << '\n';
  }
}

std::vector<double> mean_arithmetic_rank(const std::vector<std::vector<double>>& accuracy, TieRule ties) {
  if (accuracy.empty()) throw std::invalid_argument("mean_arithmetic_rank: no rows");
  const std::size_t models = accuracy[0].size();
  if (models == 0) throw std::invalid_argument("mean_arithmetic_rank: no models");
  std::vector<double> sum(models, 0.0);
  for (const auto& row : accuracy) {
    if (row.size() != models) throw std::invalid_argument("mean_arithmetic_rank: ragged matrix");
    for (std::size_t m = 0; m < models; ++m) {
      std::size_t better = 0, equal = 0;
      for (double v : row) {
        better += v > row[m];
        equal += v == row[m];
      }
      // Tied models share positions better+1 .. better+equal.
      sum[m] += ties == TieRule::min ? static_cast<double>(better + 1)
                                     : static_cast<double>(better) + static_cast<double>(equal + 1) / 2.0;
    }
  }
  for (double& s : sum) s /= static_cast<double>(accuracy.size());
  return sum;
}

void write_targeted_table(std::ostream& os, std::span<const ModelColumn> columns, TieRule ties) {
  if (columns.empty()) throw std::invalid_argument("write_targeted_table: no models");
  std::vector<std::string> names;
  for (const auto& c : columns) {
    for (const auto& r : c.rows) {
      if (std::find(names.begin(), names.end(), r.row_name()) == names.end()) names.push_back(r.row_name());
    }
  }
  const std::string rank_label = ties == TieRule::average ? "Mean arithmetic rank" : "Mean arithmetic rank (min)";
  const std::string ppl_label = "Validation perplexity";
  std::size_t width = std::max(rank_label.size(), ppl_label.size());
  for (const auto& n : names) width = std::max(width, n.size());
  width += 2;
  std::size_t col = 8;
  for (const auto& c : columns) col = std::max(col, c.name.size() + 2);

  auto pad_left = [](const std::string& s, std::size_t w) { return std::string(w > s.size() ? w - s.size() : 0, ' ') + s; };
  auto pad_right = [](const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };

  os << pad_right("Phenomenon", width);
  for (const auto& c : columns) os << pad_left(c.name, col);
  os << '\n';

  std::vector<std::vector<double>> complete;
  for (const auto& n : names) {
    os << pad_right(n, width);
    std::vector<double> row;
    for (const auto& c : columns) {
      auto it = std::find_if(c.rows.begin(), c.rows.end(), [&](const TargetedRow& r) { return r.row_name() == n; });
      if (it == c.rows.end()) {
        os << pad_left("-", col);
      } else {
        os << pad_left(fixed(it->accuracy, 2), col);
        row.push_back(it->accuracy);
      }
    }
    os << '\n';
    if (row.size() == columns.size()) complete.push_back(row);
  }
  os << pad_right(rank_label, width);
  if (complete.empty()) {
    for (std::size_t i = 0; i < columns.size(); ++i) os << pad_left("-", col);
  } else {
    for (double r : mean_arithmetic_rank(complete, ties)) os << pad_left(fixed(r, 2), col);
  }
  os << '\n' << pad_right(ppl_label, width);
  for (const auto& c : columns) os << pad_left(c.perplexity ? fixed(*c.perplexity, 2) : "-", col);
  os << '\n';
}

// ---------------------------------------------------------------------------
// Grammaticality generalization

std::vector<AccuracyRow> grammaticality_generalization(std::span<const MinimalPair> pairs,
                                                       const SentenceScorer& p_grammatical) {
  if (pairs.empty()) throw EvaluationError("grammaticality generalization of an empty pair list");
  const auto p = map_sentences(pairs.size() * 2, [&](std::size_t k) {
    const auto& pair = pairs[k / 2];
    const bool pref = k % 2 == 0;
    const double g = p_grammatical(pref ? pair.preferred : pair.contrast);
    const bool label = pref && pair.preferred_kind == PairMember::grammatical;
    return label ? g : 1.0 - g;
  });
  std::vector<AccuracyRow> rows;
  std::vector<std::size_t> correct;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const std::string& name = pairs[k / 2].template_name;
    auto it = std::find_if(rows.begin(), rows.end(), [&](const AccuracyRow& r) { return r.name == name; });
    if (it == rows.end()) {
      rows.push_back({name, 0.0, 0});
      correct.push_back(0);
      it = rows.end() - 1;
    }
    ++it->n_items;
    correct[static_cast<std::size_t>(it - rows.begin())] += p[k] > 0.5;
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].accuracy = static_cast<double>(correct[i]) / static_cast<double>(rows[i].n_items);
  }
  return rows;
}

std::vector<AccuracyRow> grammaticality_generalization(const Model& model, std::span<const MinimalPair> pairs) {
  if (model.config.task != Task::grammaticality) {
    throw std::invalid_argument("grammaticality_generalization needs a grammaticality classifier");
  }
  return grammaticality_generalization(pairs,
                                       [&](std::span<const std::string> t) { return judge_grammaticality(model, t); });
}

void write_accuracy_csv(std::ostream& os, std::span<const AccuracyRow> rows) {
  os << "name,n,accuracy\n";
  for (const auto& r : rows) os << csv_field(r.name) << ',' << r.n_items << ',' << format_double(r.accuracy) << '\n';
}

}  // namespace drnn
