#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drnn/cells.hpp"
#include "drnn/checkpoint.hpp"
#include "drnn/corpus.hpp"
#include "drnn/tensor.hpp"

namespace drnn {

enum class Task { number_prediction, grammaticality, language_model };
std::string_view to_string(Task task);
Task parse_task(std::string_view name);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VocabularyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sorted word list. Token ids are positions in `words`.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words);

  static Vocabulary from_sentences(std::span<const std::vector<AnnotatedSentence>* const> corpora);
  static Vocabulary from_sentences(const std::vector<AnnotatedSentence>& corpus);

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  std::optional<std::size_t> find(std::string_view word) const;
  /// Throws VocabularyError naming the first unknown token.
  std::vector<std::size_t> encode(std::span<const std::string> tokens) const;
  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct ModelConfig {
  CellKind cell = CellKind::drnn;
  Task task = Task::number_prediction;
  std::size_t num_layers = 1;
  std::size_t embedding_dim = 50;
  std::size_t hidden_dim = 50;
  Activation activation = Activation::relu;
  double dropout = 0.0;
  AlphaParam alpha_param = AlphaParam::sigmoid;
  std::optional<std::uint64_t> inhibitory_shuffle_seed;

  /// 1 layer, relu, embedding 50, hidden 50, no dropout.
  static ModelConfig classifier_preset(CellKind cell, Task task);
  /// 2 layers, tanh, dropout 0.2, embedding 200, hidden 650.
  static ModelConfig lm_preset(CellKind cell);

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 1;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;
  double alpha_init = 0.8;
  /// Worker threads for per-batch gradient sums; results do not depend on it.
  std::size_t threads = 1;

  static TrainConfig classifier_defaults();
  static TrainConfig lm_defaults();
  void validate() const;
};

/// Embedding, stacked recurrent layers and a linear head. Language models
/// carry one extra embedding row (the last) used as the beginning-of-sentence
/// input; it is never predicted.
struct Model {
  ModelConfig config;
  Vocabulary vocab;
  Tensor embedding;
  std::vector<CellParameters> layers;
  Tensor head_w;
  Tensor head_b;

  std::size_t output_size() const;
  std::size_t bos_id() const { return vocab.size(); }

  std::vector<Tensor*> learnable();
  std::vector<const Tensor*> learnable() const;
  std::vector<std::string> learnable_names() const;
  bool operator==(const Model& other) const;
};

/// Embedding ~ uniform(-1, 1); head like the recurrent input matrices; b = 0.
Model init_model(const ModelConfig& config, Vocabulary vocab, std::uint64_t seed,
                 double alpha_init = 0.8);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update. Moments are created on first use.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const AdamOptions& options);

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(std::span<Tensor> grads, double max_norm);

struct TrainingHistory {
  std::vector<double> train_loss;
  /// Accuracy for classifiers, perplexity for language models; NaN without
  /// a validation set.
  std::vector<double> valid_metric;
  std::string metric_name;
  /// alpha of every decaying layer after each optimizer step.
  std::vector<std::vector<double>> step_alpha;
  /// alpha of every decaying layer at the end of each epoch.
  std::vector<std::vector<double>> epoch_alpha;
  std::size_t steps = 0;
  /// 1-based; 0 when the best model is the initialization.
  std::size_t best_epoch = 0;
};

/// Columns: epoch, loss, metric, alpha_layer<i>...
void write_history_csv(std::ostream& os, const TrainingHistory& history);

struct TrainResult {
  Model last;
  Model best;
  TrainingHistory history;
};

/// Trains from `model`. The returned `last` is the model after
/// the final epoch. `best` maximizes validation accuracy (classifiers) or
/// minimizes validation perplexity (LMs); without validation data it is `last`.
TrainResult train(Model model, const TrainConfig& config, const std::vector<AnnotatedSentence>& train_set,
                  const std::vector<AnnotatedSentence>& valid_set);

/// Builds the vocabulary from both sets, initializes and trains.
TrainResult train_classifier(const ModelConfig& model_config, const TrainConfig& train_config,
                             const std::vector<AnnotatedSentence>& train_set,
                             const std::vector<AnnotatedSentence>& valid_set = {});
TrainResult train_lm(const ModelConfig& model_config, const TrainConfig& train_config,
                     const std::vector<AnnotatedSentence>& train_set,
                     const std::vector<AnnotatedSentence>& valid_set = {});

/// (p_singular, p_plural) after reading `prefix`.
std::array<double, 2> classify_number(const Model& model, std::span<const std::string> prefix);
/// Probability of the "grammatical" class.
double judge_grammaticality(const Model& model, std::span<const std::string> tokens);
/// Two-way head applied after every position: entry t is the distribution
/// after reading tokens[0..t].
std::vector<std::array<double, 2>> classifier_curve(const Model& model, std::span<const std::string> tokens);
/// Sum over positions of log p(token_t | tokens_<t), without dropout.
double lm_logprob(const Model& model, std::span<const std::string> tokens);

/// Input tokens and target class the classifier is trained on.
std::span<const std::string> classifier_input(const AnnotatedSentence& s, Task task);
std::size_t classifier_target(const AnnotatedSentence& s, Task task);

Checkpoint model_to_checkpoint(const Model& model);
Model model_from_checkpoint(const Checkpoint& ckpt);
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

/// Calls fn(0..n-1) on up to `threads` workers. The first failing index's
/// exception is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Thread budget from DRNN_THREADS (default 1, minimum 1).
std::size_t thread_budget();

/// Shortest round-trip decimal form, used by every CSV writer.
std::string format_double(double v);

}  // namespace drnn
