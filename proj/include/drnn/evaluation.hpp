#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drnn/corpus.hpp"
#include "drnn/training.hpp"

namespace drnn {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fraction of entries strictly above 0.5. A probability of exactly 0.5 is a
/// tie and counts as incorrect.
double accuracy_from_probabilities(std::span<const double> p_correct);

/// Probability the classifier assigns to the correct class of each sentence:
/// the subject's number for number prediction, the grammaticality label for
/// grammaticality judgement.
std::vector<double> correct_probabilities(const Model& model, std::span<const AnnotatedSentence> corpus);

struct AccuracyRow {
  std::string name;
  double accuracy = 0.0;
  std::size_t n_items = 0;
};

AccuracyRow accuracy(const Model& model, std::span<const AnnotatedSentence> corpus,
                     const std::string& name = "all");

enum class StratumKey { distance, attractor_count, non_attractor_count };
std::string_view to_string(StratumKey key);
StratumKey parse_stratum_key(std::string_view name);
std::size_t stratum_value(const AnnotatedSentence& s, StratumKey key);

struct StratumCell {
  std::size_t value = 0;
  std::size_t n_items = 0;
  /// Absent when n_items is below the table's minimum.
  std::optional<double> accuracy;
};

struct StratifiedTable {
  std::vector<std::pair<StratumKey, std::size_t>> fixed;
  StratumKey vary = StratumKey::non_attractor_count;
  std::size_t min_items = 50;
  /// Ascending by value; strata without items do not appear.
  std::vector<StratumCell> cells;
};

/// Groups the items matching every fixed key by `vary`. `correct` is aligned
/// with `corpus`.
StratifiedTable stratify(std::span<const AnnotatedSentence> corpus, const std::vector<bool>& correct,
                         std::vector<std::pair<StratumKey, std::size_t>> fixed, StratumKey vary,
                         std::size_t min_items = 50);

StratifiedTable stratified_accuracy(const Model& model, std::span<const AnnotatedSentence> corpus,
                                    std::vector<std::pair<StratumKey, std::size_t>> fixed, StratumKey vary,
                                    std::size_t min_items = 50);

/// Columns: <vary>, n, accuracy (empty when below the minimum).
void write_stratified_csv(std::ostream& os, const StratifiedTable& table);

struct ProfilePoint {
  std::string label;
  std::string example;
  double mean = 0.0;
  std::size_t n = 0;
};

struct ConfidenceProfile {
  std::string template_name;
  std::vector<ProfilePoint> points;
};

/// Averages, per token position, the number-prediction probability of the
/// subject's number after reading up to that position. All sentences must
/// come from one template and have equal length.
ConfidenceProfile confidence_profile(const Model& model, std::span<const AnnotatedSentence> corpus);

/// Columns: position, label, example, mean, n.
void write_profile_csv(std::ostream& os, const ConfidenceProfile& profile);

/// exp(-total / count).
double perplexity_from_logprob(double total_logprob, std::size_t token_count);
double perplexity(const Model& model, std::span<const AnnotatedSentence> corpus);
/// Summed lm_logprob over the corpus, in corpus order.
double corpus_logprob(const Model& model, std::span<const AnnotatedSentence> corpus);
std::size_t token_count(std::span<const AnnotatedSentence> corpus);

/// Add-one unigram model estimated on `train` over the union vocabulary of
/// both sets, evaluated on `eval`.
double unigram_perplexity(std::span<const AnnotatedSentence> train, std::span<const AnnotatedSentence> eval);

struct TargetedRow {
  std::string label;
  Phenomenon phenomenon = Phenomenon::sv_agreement;
  RangeTag range = RangeTag::short_range;
  PairMember preferred_kind = PairMember::grammatical;
  PairMember contrast_kind = PairMember::ungrammatical;
  std::size_t correct = 0;
  std::size_t n_items = 0;
  double accuracy = 0.0;

  /// The label, with the contrast appended for NPI rows.
  std::string row_name() const;
};

using SentenceScorer = std::function<double(std::span<const std::string>)>;

/// A pair is correct when the preferred member scores strictly higher. Rows
/// appear in order of first occurrence.
std::vector<TargetedRow> targeted_eval(std::span<const MinimalPair> pairs, const SentenceScorer& score);
/// Scores full sentences with lm_logprob.
std::vector<TargetedRow> targeted_eval(const Model& model, std::span<const MinimalPair> pairs);

/// Columns: row, phenomenon, range, correct, n, accuracy.
void write_targeted_csv(std::ostream& os, std::span<const TargetedRow> rows);

enum class TieRule { average, min };

/// accuracy[row][model]. Per row, models are ranked by descending accuracy
/// (1 = best); returns the mean rank of each model.
std::vector<double> mean_arithmetic_rank(const std::vector<std::vector<double>>& accuracy,
                                         TieRule ties = TieRule::average);

struct ModelColumn {
  std::string name;
  std::vector<TargetedRow> rows;
  std::optional<double> perplexity;
};

/// Fixed-width table: one line per row name (first column's order), one
/// column per model, followed by mean-rank and perplexity lines.
void write_targeted_table(std::ostream& os, std::span<const ModelColumn> columns,
                          TieRule ties = TieRule::average);

/// Classifier accuracy on both members of each pair, grouped by template.
/// The preferred member of a grammatical-vs-X pair is labelled grammatical;
/// every other member is labelled ungrammatical.
std::vector<AccuracyRow> grammaticality_generalization(std::span<const MinimalPair> pairs,
                                                       const SentenceScorer& p_grammatical);
std::vector<AccuracyRow> grammaticality_generalization(const Model& model, std::span<const MinimalPair> pairs);

/// Columns: name, n, accuracy.
void write_accuracy_csv(std::ostream& os, std::span<const AccuracyRow> rows);

}  // namespace drnn
