#include "drnn/training.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "drnn/rng.hpp"
#include "drnn/tape.hpp"

namespace drnn {

std::string_view to_string(Task task) {
  switch (task) {
    case Task::number_prediction: return "number_prediction";
    case Task::grammaticality: return "grammaticality";
    case Task::language_model: return "language_model";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  if (name == "number_prediction") return Task::number_prediction;
  if (name == "grammaticality") return Task::grammaticality;
  if (name == "language_model") return Task::language_model;
  throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::size_t thread_budget() {
  const char* env = std::getenv("DRNN_THREADS");
  if (!env) return 1;
  std::size_t n = 0;
  const std::string_view s(env);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), n);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || n == 0) return 1;
  return n;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  std::sort(words_.begin(), words_.end());
  words_.erase(std::unique(words_.begin(), words_.end()), words_.end());
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
}

Vocabulary Vocabulary::from_sentences(std::span<const std::vector<AnnotatedSentence>* const> corpora) {
  std::set<std::string> words;
  for (const auto* c : corpora) {
    for (const auto& s : *c) words.insert(s.tokens.begin(), s.tokens.end());
  }
  return Vocabulary(std::vector<std::string>(words.begin(), words.end()));
}

Vocabulary Vocabulary::from_sentences(const std::vector<AnnotatedSentence>& corpus) {
  const std::vector<AnnotatedSentence>* one[] = {&corpus};
  return from_sentences(one);
}

std::optional<std::size_t> Vocabulary::find(std::string_view word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    const auto id = find(t);
    if (!id) throw VocabularyError("token '" + t + "' is not in the model vocabulary");
    ids.push_back(*id);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Configuration

ModelConfig ModelConfig::classifier_preset(CellKind cell, Task task) {
  if (task == Task::language_model) throw std::invalid_argument("classifier preset needs a classifier task");
  ModelConfig c;
  c.cell = cell;
  c.task = task;
  return c;
}

ModelConfig ModelConfig::lm_preset(CellKind cell) {
  ModelConfig c;
  c.cell = cell;
  c.task = Task::language_model;
  c.num_layers = 2;
  c.embedding_dim = 200;
  c.hidden_dim = 650;
  c.activation = Activation::tanh;
  c.dropout = 0.2;
  return c;
}

void ModelConfig::validate() const {
  if (num_layers == 0) throw std::invalid_argument("num_layers must be at least 1");
  if (embedding_dim == 0 || hidden_dim == 0) throw std::invalid_argument("dimensions must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
}

TrainConfig TrainConfig::classifier_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::lm_defaults() {
  TrainConfig c;
  c.batch_size = 128;
  c.epochs = 20;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be positive");
  }
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
  if (!(alpha_init > 0.0 && alpha_init < 1.0)) throw std::invalid_argument("alpha_init must lie in (0, 1)");
}

// ---------------------------------------------------------------------------
// Model

std::size_t Model::output_size() const {
  return config.task == Task::language_model ? vocab.size() : 2;
}

std::vector<Tensor*> Model::learnable() {
  std::vector<Tensor*> out{&embedding};
  for (auto& l : layers) {
    for (Tensor* t : l.learnable()) out.push_back(t);
  }
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

std::vector<const Tensor*> Model::learnable() const {
  auto mut = const_cast<Model*>(this)->learnable();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> Model::learnable_names() const {
  std::vector<std::string> out{"embedding"};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (const auto& n : layers[i].learnable_names()) out.push_back("layer" + std::to_string(i) + "." + n);
  }
  out.push_back("head.W");
  out.push_back("head.b");
  return out;
}

bool Model::operator==(const Model& other) const {
  if (!(config == other.config) || !(vocab == other.vocab) || layers.size() != other.layers.size()) {
    return false;
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].dale_signs != other.layers[i].dale_signs) return false;
  }
  const auto a = learnable();
  const auto b = other.learnable();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(*a[i] == *b[i])) return false;
  }
  return true;
}

Model init_model(const ModelConfig& config, Vocabulary vocab, std::uint64_t seed, double alpha_init) {
  config.validate();
  if (vocab.size() == 0) throw std::invalid_argument("empty vocabulary");
  Model m;
  m.config = config;
  m.vocab = std::move(vocab);
  const bool lm = config.task == Task::language_model;

  const std::size_t rows = m.vocab.size() + (lm ? 1 : 0);
  m.embedding = Tensor({rows, config.embedding_dim});
  Rng emb_rng = Rng::derive(seed, 0);
  for (double& v : m.embedding.values()) v = emb_rng.uniform(-1.0, 1.0);

  InitOptions opts;
  opts.activation = config.activation;
  opts.alpha_param = config.alpha_param;
  opts.alpha_init = alpha_init;
  opts.inhibitory_shuffle_seed = config.inhibitory_shuffle_seed;
  for (std::size_t i = 0; i < config.num_layers; ++i) {
    const std::size_t input = i == 0 ? config.embedding_dim : config.hidden_dim;
    m.layers.push_back(
        init_parameters(config.cell, config.hidden_dim, input, Rng::derive(seed, 1 + i).next(), opts));
  }

  const std::size_t out = m.output_size();
  m.head_w = Tensor({out, config.hidden_dim});
  m.head_b = Tensor({out});
  Rng head_rng = Rng::derive(seed, 1000);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.hidden_dim));
  for (double& v : m.head_w.values()) v = head_rng.uniform(-bound, bound);
  return m;
}

// ---------------------------------------------------------------------------
// Optimizer

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const AdamOptions& o) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: params/grads count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i])) {
      throw ShapeError("adam_step: gradient " + std::to_string(i) + " has shape " +
                       shape_string(grads[i].shape()) + ", parameter has " +
                       shape_string(params[i]->shape()));
    }
    grads[i].require_finite("adam_step gradient");
  }
  if (state.m.empty()) {
    for (Tensor* p : params) {
      state.m.push_back(Tensor::zeros_like(*p));
      state.v.push_back(Tensor::zeros_like(*p));
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state does not match params");
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i]->data();
    const double* g = grads[i].data();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    for (std::size_t k = 0; k < grads[i].size(); ++k) {
      m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g[k];
      v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= o.learning_rate * mhat / (std::sqrt(vhat) + o.epsilon);
    }
  }
}

double clip_global_norm(std::span<Tensor> grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads) {
    for (double v : g.values()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (Tensor& g : grads) {
      for (double& v : g.values()) v *= scale;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

Tensor dropout_mask(Rng& rng, std::size_t n, double rate) {
  const double keep = 1.0 - rate;
  Tensor m({n});
  for (double& v : m.values()) v = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  return m;
}

class Network {
 public:
  Network(Tape& tape, const Model& model) : tape_(tape), model_(model) {
    emb_ = tape.leaf(model.embedding);
    leaves_.push_back(emb_);
    cells_.reserve(model.layers.size());
    for (const auto& layer : model.layers) {
      cells_.emplace_back(tape, layer);
      for (NodeId id : cells_.back().leaves()) leaves_.push_back(id);
    }
    hw_ = tape.leaf(model.head_w);
    hb_ = tape.leaf(model.head_b);
    leaves_.push_back(hw_);
    leaves_.push_back(hb_);
  }

  /// Top-layer hidden state after each input id. Dropout (when `rng` is set)
  /// masks the embedding output, every inter-layer connection and the head
  /// input.
  std::vector<NodeId> run(std::span<const std::size_t> ids, Rng* rng) {
    const double rate = model_.config.dropout;
    const bool drop = rng && rate > 0.0;
    std::vector<StateNodes> state;
    for (const auto& c : cells_) state.push_back(c.initial_state());
    std::vector<NodeId> tops;
    tops.reserve(ids.size());
    for (std::size_t id : ids) {
      NodeId x = tape_.row(emb_, id);
      if (drop) x = tape_.mask(x, dropout_mask(*rng, model_.config.embedding_dim, rate));
      for (std::size_t l = 0; l < cells_.size(); ++l) {
        state[l] = cells_[l].step(state[l], x);
        x = state[l].h;
        if (drop) x = tape_.mask(x, dropout_mask(*rng, model_.config.hidden_dim, rate));
      }
      tops.push_back(x);
    }
    return tops;
  }

  NodeId logits(NodeId h) { return tape_.add(tape_.matvec(hw_, h), hb_); }

  const std::vector<NodeId>& leaves() const { return leaves_; }

 private:
  Tape& tape_;
  const Model& model_;
  std::vector<BoundCell> cells_;
  std::vector<NodeId> leaves_;
  NodeId emb_;
  NodeId hw_;
  NodeId hb_;
};

struct Example {
  std::vector<std::size_t> ids;
  std::size_t target = 0;  // classifiers only
};

std::vector<Example> encode_examples(const Model& model, const std::vector<AnnotatedSentence>& set) {
  std::vector<Example> out;
  out.reserve(set.size());
  const Task task = model.config.task;
  for (const auto& s : set) {
    if (task == Task::language_model) {
      out.push_back({model.vocab.encode(s.tokens), 0});
    } else {
      out.push_back({model.vocab.encode(classifier_input(s, task)), classifier_target(s, task)});
    }
  }
  return out;
}

/// Builds the loss of one example on `tape`. Returns the summed
/// cross-entropy node and the number of predictions it covers.
std::pair<NodeId, std::size_t> example_loss(Tape& tape, Network& net, const Model& model,
                                            const Example& ex, Rng* dropout) {
  if (model.config.task == Task::language_model) {
    std::vector<std::size_t> inputs{model.bos_id()};
    inputs.insert(inputs.end(), ex.ids.begin(), ex.ids.end() - 1);
    const auto tops = net.run(inputs, dropout);
    std::vector<NodeId> terms;
    terms.reserve(tops.size());
    for (std::size_t t = 0; t < tops.size(); ++t) {
      terms.push_back(tape.softmax_xent(net.logits(tops[t]), ex.ids[t]));
    }
    return {tape.add_n(terms), terms.size()};
  }
  const auto tops = net.run(ex.ids, dropout);
  return {tape.softmax_xent(net.logits(tops.back()), ex.target), 1};
}

/// Runs fn(0..n-1) on up to `threads` workers. Exceptions are rethrown from
/// the lowest failing index.
void run_indexed(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

constexpr std::size_t kGradientChunks = 8;

struct BatchResult {
  std::vector<Tensor> grads;
  double loss_sum = 0.0;
  std::size_t predictions = 0;
};

BatchResult batch_gradients(const Model& model, const std::vector<Example>& data,
                            std::span<const std::size_t> batch, std::uint64_t dropout_seed,
                            std::size_t threads) {
  const std::size_t chunks = std::min(kGradientChunks, batch.size());
  std::vector<BatchResult> partial(chunks);
  run_indexed(chunks, threads, [&](std::size_t c) {
    BatchResult& r = partial[c];
    r.grads.resize(model.learnable().size());
    const std::size_t begin = batch.size() * c / chunks;
    const std::size_t end = batch.size() * (c + 1) / chunks;
    // One tape per chunk: parameter-only nodes are built and differentiated once.
    Tape tape;
    Network net(tape, model);
    std::vector<NodeId> losses;
    for (std::size_t k = begin; k < end; ++k) {
      Rng rng = Rng::derive(dropout_seed, batch[k]);
      const auto [loss, count] = example_loss(tape, net, model, data[batch[k]], &rng);
      losses.push_back(loss);
      r.predictions += count;
    }
    const NodeId total = losses.size() == 1 ? losses[0] : tape.add_n(losses);
    const Gradients g = tape.backward(total);
    for (std::size_t i = 0; i < r.grads.size(); ++i) r.grads[i] = g.of(net.leaves()[i]);
    r.loss_sum = tape.value(total).item();
  });
  BatchResult total = std::move(partial[0]);
  for (std::size_t c = 1; c < chunks; ++c) {
    for (std::size_t i = 0; i < total.grads.size(); ++i) {
      double* dst = total.grads[i].data();
      const double* src = partial[c].grads[i].data();
      for (std::size_t j = 0; j < total.grads[i].size(); ++j) dst[j] += src[j];
    }
    total.loss_sum += partial[c].loss_sum;
    total.predictions += partial[c].predictions;
  }
  return total;
}

/// Per-example summed log-likelihood (LM) or correctness (classifier), in
/// input order.
struct ExampleScore {
  double logprob = 0.0;
  std::size_t predictions = 0;
  bool correct = false;
};

std::vector<ExampleScore> score_examples(const Model& model, const std::vector<Example>& data,
                                         std::size_t threads) {
  std::vector<ExampleScore> out(data.size());
  const std::size_t chunks = std::min<std::size_t>(kGradientChunks * 4, data.size());
  run_indexed(chunks, threads, [&](std::size_t c) {
    for (std::size_t k = data.size() * c / chunks; k < data.size() * (c + 1) / chunks; ++k) {
      Tape tape;
      Network net(tape, model);
      const auto [loss, count] = example_loss(tape, net, model, data[k], nullptr);
      out[k].logprob = -tape.value(loss).item();
      out[k].predictions = count;
      if (model.config.task != Task::language_model) {
        out[k].correct = tape.probabilities(loss)[data[k].target] > 0.5;
      }
    }
  });
  return out;
}

double validation_metric(const Model& model, const std::vector<Example>& valid, std::size_t threads) {
  if (valid.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto scores = score_examples(model, valid, threads);
  if (model.config.task == Task::language_model) {
    double lp = 0.0;
    std::size_t n = 0;
    for (const auto& s : scores) {
      lp += s.logprob;
      n += s.predictions;
    }
    return std::exp(-lp / static_cast<double>(n));
  }
  std::size_t correct = 0;
  for (const auto& s : scores) correct += s.correct;
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

std::vector<double> decay_alphas(const Model& model) {
  std::vector<double> out;
  for (const auto& l : model.layers) {
    if (has_decay(l.kind)) out.push_back(l.alpha());
  }
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<Example>& data, const Model& model,
                                                   const TrainConfig& cfg, std::size_t epoch) {
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng::derive(cfg.seed, 0x10000 + epoch);
  rng.shuffle(order);

  std::vector<std::vector<std::size_t>> batches;
  if (model.config.task != Task::language_model) {
    for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + cfg.batch_size)));
    }
    return batches;
  }
  // Same-length buckets, so no padding is ever needed.
  std::map<std::size_t, std::vector<std::size_t>> buckets;
  for (std::size_t i : order) buckets[data[i].ids.size()].push_back(i);
  for (const auto& [len, items] : buckets) {
    for (std::size_t i = 0; i < items.size(); i += cfg.batch_size) {
      batches.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(i),
                           items.begin() + static_cast<std::ptrdiff_t>(std::min(items.size(), i + cfg.batch_size)));
    }
  }
  rng.shuffle(batches);
  return batches;
}

}  // namespace

// ---------------------------------------------------------------------------
// Training

std::span<const std::string> classifier_input(const AnnotatedSentence& s, Task task) {
  if (task == Task::number_prediction) {
    return std::span<const std::string>(s.tokens).first(s.verb_index);
  }
  return s.tokens;
}

std::size_t classifier_target(const AnnotatedSentence& s, Task task) {
  if (task == Task::number_prediction) return s.subject_number == Number::sg ? 0 : 1;
  return s.grammatical ? 1 : 0;
}

TrainResult train(Model model, const TrainConfig& cfg, const std::vector<AnnotatedSentence>& train_set,
                  const std::vector<AnnotatedSentence>& valid_set) {
  cfg.validate();
  model.config.validate();
  if (train_set.empty()) throw TrainingError("empty training corpus");
  const auto data = encode_examples(model, train_set);
  const auto valid = encode_examples(model, valid_set);
  for (const auto& ex : data) {
    if (ex.ids.empty()) throw TrainingError("training example with no input tokens");
  }
  const bool lm = model.config.task == Task::language_model;

  TrainResult result;
  TrainingHistory& h = result.history;
  h.metric_name = lm ? "perplexity" : "accuracy";
  result.best = model;
  double best_metric = lm ? std::numeric_limits<double>::infinity() : -1.0;

  AdamState adam;
  AdamOptions adam_opts;
  adam_opts.learning_rate = cfg.learning_rate;
  const auto params = model.learnable();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t predictions = 0;
    for (const auto& batch : make_batches(data, model, cfg, epoch)) {
      const std::size_t step = h.steps + 1;
      BatchResult r;
      try {
        r = batch_gradients(model, data, batch, Rng::derive(cfg.seed, 0x20000000 + step).next(), cfg.threads);
      } catch (const NonFiniteError& e) {
        throw TrainingError("training diverged at step " + std::to_string(step) + ": " + e.what());
      }
      if (!std::isfinite(r.loss_sum)) {
        throw TrainingError("training diverged at step " + std::to_string(step) + ": non-finite loss");
      }
      const double scale = 1.0 / static_cast<double>(lm ? r.predictions : batch.size());
      for (Tensor& g : r.grads) {
        for (double& v : g.values()) v *= scale;
      }
      clip_global_norm(r.grads, cfg.clip_norm);
      try {
        adam_step(params, r.grads, adam, adam_opts);
      } catch (const NonFiniteError& e) {
        throw TrainingError("training diverged at step " + std::to_string(step) + ": " + e.what());
      }
      for (const Tensor* p : params) {
        if (!p->all_finite()) {
          throw TrainingError("training diverged at step " + std::to_string(step) + ": non-finite parameter");
        }
      }
      h.steps = step;
      h.step_alpha.push_back(decay_alphas(model));
      loss_sum += r.loss_sum;
      predictions += lm ? r.predictions : batch.size();
    }
    h.train_loss.push_back(loss_sum / static_cast<double>(predictions));
    const double metric = validation_metric(model, valid, cfg.threads);
    h.valid_metric.push_back(metric);
    h.epoch_alpha.push_back(decay_alphas(model));
    if (!std::isnan(metric) && (lm ? metric < best_metric : metric > best_metric)) {
      best_metric = metric;
      result.best = model;
      h.best_epoch = epoch;
    }
  }
  if (valid.empty()) {
    result.best = model;
    h.best_epoch = cfg.epochs;
  }
  result.last = std::move(model);
  return result;
}

TrainResult train_classifier(const ModelConfig& mc, const TrainConfig& tc,
                             const std::vector<AnnotatedSentence>& train_set,
                             const std::vector<AnnotatedSentence>& valid_set) {
  if (mc.task == Task::language_model) throw std::invalid_argument("train_classifier needs a classifier task");
  if (train_set.empty()) throw TrainingError("empty training corpus");
  const std::vector<AnnotatedSentence>* sets[] = {&train_set, &valid_set};
  return train(init_model(mc, Vocabulary::from_sentences(sets), tc.seed, tc.alpha_init), tc, train_set,
               valid_set);
}

TrainResult train_lm(const ModelConfig& mc, const TrainConfig& tc,
                     const std::vector<AnnotatedSentence>& train_set,
                     const std::vector<AnnotatedSentence>& valid_set) {
  if (mc.task != Task::language_model) throw std::invalid_argument("train_lm needs the language_model task");
  if (train_set.empty()) throw TrainingError("empty training corpus");
  const std::vector<AnnotatedSentence>* sets[] = {&train_set, &valid_set};
  return train(init_model(mc, Vocabulary::from_sentences(sets), tc.seed, tc.alpha_init), tc, train_set,
               valid_set);
}

void write_history_csv(std::ostream& os, const TrainingHistory& h) {
  const std::size_t layers = h.epoch_alpha.empty() ? 0 : h.epoch_alpha.front().size();
  os << "epoch,loss," << (h.metric_name.empty() ? "metric" : h.metric_name);
  for (std::size_t l = 0; l < layers; ++l) os << ",alpha_layer" << l;
  os << '\n';
  for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
    os << e + 1 << ',' << format_double(h.train_loss[e]) << ',' << format_double(h.valid_metric[e]);
    for (double a : h.epoch_alpha[e]) os << ',' << format_double(a);
    os << '\n';
  }
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  run_indexed(n, threads, fn);
}

// ---------------------------------------------------------------------------
// Inference

namespace {

void require_classifier(const Model& model, const char* what) {
  if (model.config.task == Task::language_model) {
    throw std::invalid_argument(std::string(what) + " needs a classifier model");
  }
}

}  // namespace

std::vector<std::array<double, 2>> classifier_curve(const Model& model, std::span<const std::string> tokens) {
  require_classifier(model, "classifier_curve");
  const auto ids = model.vocab.encode(tokens);
  Tape tape;
  Network net(tape, model);
  std::vector<std::array<double, 2>> out;
  for (NodeId h : net.run(ids, nullptr)) {
    const auto p = softmax(tape.value(net.logits(h)).values());
    out.push_back({p[0], p[1]});
  }
  return out;
}

std::array<double, 2> classify_number(const Model& model, std::span<const std::string> prefix) {
  if (prefix.empty()) throw std::invalid_argument("classify_number: empty prefix");
  return classifier_curve(model, prefix).back();
}

double judge_grammaticality(const Model& model, std::span<const std::string> tokens) {
  if (tokens.empty()) throw std::invalid_argument("judge_grammaticality: empty sentence");
  return classifier_curve(model, tokens).back()[1];
}

double lm_logprob(const Model& model, std::span<const std::string> tokens) {
  if (model.config.task != Task::language_model) {
    throw std::invalid_argument("lm_logprob needs a language model");
  }
  if (tokens.empty()) return 0.0;
  Tape tape;
  Network net(tape, model);
  const auto [loss, count] = example_loss(tape, net, model, Example{model.vocab.encode(tokens), 0}, nullptr);
  return -tape.value(loss).item();
}

// ---------------------------------------------------------------------------
// Checkpoints

Checkpoint model_to_checkpoint(const Model& m) {
  Checkpoint c;
  c.set("format", "drnn-model");
  c.set("task", std::string(to_string(m.config.task)));
  c.set("cell", std::string(to_string(m.config.cell)));
  c.set("num_layers", std::to_string(m.config.num_layers));
  c.set("embedding_dim", std::to_string(m.config.embedding_dim));
  c.set("hidden_dim", std::to_string(m.config.hidden_dim));
  c.set("activation", std::string(to_string(m.config.activation)));
  c.set("dropout", format_double(m.config.dropout));
  c.set("alpha_param", std::string(to_string(m.config.alpha_param)));
  if (m.config.inhibitory_shuffle_seed) {
    c.set("inhibitory_shuffle_seed", std::to_string(*m.config.inhibitory_shuffle_seed));
  }
  c.set("vocab_size", std::to_string(m.vocab.size()));
  std::string words;
  for (const auto& w : m.vocab.words()) {
    if (!words.empty()) words += ' ';
    words += w;
  }
  c.set("vocab", words);
  c.add_array("embedding", m.embedding);
  for (std::size_t i = 0; i < m.layers.size(); ++i) append_cell(c, "layer" + std::to_string(i) + ".", m.layers[i]);
  c.add_array("head.W", m.head_w);
  c.add_array("head.b", m.head_b);
  return c;
}

namespace {

std::size_t header_size(const Checkpoint& c, const std::string& key) {
  const std::string& v = c.get(key);
  std::size_t n = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), n);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw CheckpointError("header '" + key + "' is not an integer: '" + v + "'");
  }
  return n;
}

}  // namespace

Model model_from_checkpoint(const Checkpoint& c) {
  if (!c.has("format") || c.get("format") != "drnn-model") throw CheckpointError("not a model checkpoint");
  Model m;
  try {
    m.config.task = parse_task(c.get("task"));
    m.config.cell = parse_cell_kind(c.get("cell"));
    m.config.activation = parse_activation(c.get("activation"));
    m.config.alpha_param = parse_alpha_param(c.get("alpha_param"));
    m.config.dropout = std::stod(c.get("dropout"));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("bad model header: ") + e.what());
  }
  m.config.num_layers = header_size(c, "num_layers");
  m.config.embedding_dim = header_size(c, "embedding_dim");
  m.config.hidden_dim = header_size(c, "hidden_dim");
  if (c.has("inhibitory_shuffle_seed")) m.config.inhibitory_shuffle_seed = header_size(c, "inhibitory_shuffle_seed");
  m.vocab = Vocabulary(tokenize(c.get("vocab")));
  if (m.vocab.size() != header_size(c, "vocab_size")) throw CheckpointError("vocabulary size mismatch");

  m.embedding = c.array("embedding");
  for (std::size_t i = 0; i < m.config.num_layers; ++i) {
    m.layers.push_back(extract_cell(c, "layer" + std::to_string(i) + "."));
  }
  m.head_w = c.array("head.W");
  m.head_b = c.array("head.b");

  const std::size_t rows = m.vocab.size() + (m.config.task == Task::language_model ? 1 : 0);
  const std::size_t out = m.output_size();
  if (m.embedding.shape() != std::vector<std::size_t>{rows, m.config.embedding_dim} ||
      m.head_w.shape() != std::vector<std::size_t>{out, m.config.hidden_dim} ||
      m.head_b.shape() != std::vector<std::size_t>{out}) {
    throw CheckpointError("model arrays do not match the declared dimensions");
  }
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    const std::size_t input = i == 0 ? m.config.embedding_dim : m.config.hidden_dim;
    if (l.kind != m.config.cell || l.hidden_size != m.config.hidden_dim || l.input_size != input) {
      throw CheckpointError("layer " + std::to_string(i) + " does not match the model header");
    }
  }
  return m;
}

void save_model(const std::filesystem::path& path, const Model& model) {
  save_checkpoint(path, model_to_checkpoint(model));
}

Model load_model(const std::filesystem::path& path) { return model_from_checkpoint(load_checkpoint(path)); }

}  // namespace drnn
