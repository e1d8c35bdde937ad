#include "drnn/cells.hpp"

#include <cmath>
#include <stdexcept>

#include "drnn/rng.hpp"

namespace drnn {

std::string_view to_string(CellKind kind) {
  switch (kind) {
    case CellKind::srn: return "srn";
    case CellKind::drnn: return "drnn";
    case CellKind::sdrnn: return "sdrnn";
    case CellKind::abdrnn: return "abdrnn";
    case CellKind::lstm: return "lstm";
    case CellKind::gru: return "gru";
  }
  return "?";
}

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "?";
}

std::string_view to_string(AlphaParam param) {
  return param == AlphaParam::sigmoid ? "sigmoid" : "linear";
}

CellKind parse_cell_kind(std::string_view name) {
  for (CellKind k : kAllCellKinds) {
    if (to_string(k) == name) return k;
  }
  if (name == "ab-drnn" || name == "ab_drnn") return CellKind::abdrnn;
  throw std::invalid_argument("unknown cell kind '" + std::string(name) + "'");
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

AlphaParam parse_alpha_param(std::string_view name) {
  if (name == "sigmoid") return AlphaParam::sigmoid;
  if (name == "linear") return AlphaParam::linear;
  throw std::invalid_argument("unknown alpha parameterization '" + std::string(name) + "'");
}

bool has_decay(CellKind kind) {
  return kind == CellKind::drnn || kind == CellKind::sdrnn || kind == CellKind::abdrnn;
}

bool has_dale_signs(CellKind kind) { return kind == CellKind::drnn; }

bool has_recurrent_matrix(CellKind kind) { return kind != CellKind::abdrnn; }

std::size_t gate_count(CellKind kind) {
  switch (kind) {
    case CellKind::lstm: return 4;
    case CellKind::gru: return 3;
    default: return 1;
  }
}

std::size_t inhibitory_count(std::size_t hidden_size) {
  const auto rounded = static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(hidden_size)));
  return std::max<std::size_t>(1, rounded);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

double CellParameters::alpha() const {
  if (alpha_logit.empty()) throw std::logic_error(std::string(to_string(kind)) + " has no alpha");
  const double raw = alpha_logit[0];
  return alpha_param == AlphaParam::sigmoid ? 1.0 / (1.0 + std::exp(-raw)) : raw;
}

std::vector<Tensor*> CellParameters::learnable() {
  std::vector<Tensor*> out;
  if (!W.empty()) out.push_back(&W);
  out.push_back(&U);
  out.push_back(&b);
  if (!alpha_logit.empty()) out.push_back(&alpha_logit);
  return out;
}

std::vector<const Tensor*> CellParameters::learnable() const {
  auto mut = const_cast<CellParameters*>(this)->learnable();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> CellParameters::learnable_names() const {
  std::vector<std::string> out;
  if (!W.empty()) out.emplace_back("W");
  out.emplace_back("U");
  out.emplace_back("b");
  if (!alpha_logit.empty()) out.emplace_back("alpha_logit");
  return out;
}

void CellParameters::validate() const {
  const std::size_t gates = gate_count(kind);
  const std::vector<std::size_t> w_shape{gates * hidden_size, hidden_size};
  const std::vector<std::size_t> u_shape{gates * hidden_size, input_size};
  if (has_recurrent_matrix(kind) && W.shape() != w_shape) {
    throw ShapeError("W has shape " + shape_string(W.shape()) + ", expected " +
                     shape_string(w_shape));
  }
  if (U.shape() != u_shape) {
    throw ShapeError("U has shape " + shape_string(U.shape()) + ", expected " +
                     shape_string(u_shape));
  }
  if (b.shape() != std::vector<std::size_t>{gates * hidden_size}) {
    throw ShapeError("b has shape " + shape_string(b.shape()));
  }
  if (has_decay(kind) && alpha_logit.size() != 1) throw ShapeError("decay cell needs scalar alpha");
  if (has_dale_signs(kind)) {
    if (dale_signs.size() != hidden_size) throw ShapeError("dale_signs length != hidden_size");
    for (double s : dale_signs) {
      if (s != 1.0 && s != -1.0) throw std::invalid_argument("dale_signs entries must be +1/-1");
    }
  }
}

CellParameters init_parameters(CellKind kind, std::size_t hidden_size, std::size_t input_size,
                               std::uint64_t seed, const InitOptions& options) {
  if (hidden_size == 0 || input_size == 0) throw std::invalid_argument("cell dimensions must be > 0");
  CellParameters p;
  p.kind = kind;
  p.activation = options.activation;
  p.alpha_param = options.alpha_param;
  p.hidden_size = hidden_size;
  p.input_size = input_size;

  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size));
  const std::size_t gates = gate_count(kind);
  if (has_recurrent_matrix(kind)) {
    p.W = Tensor({gates * hidden_size, hidden_size});
    for (double& v : p.W.values()) v = rng.uniform(-bound, bound);
  }
  p.U = Tensor({gates * hidden_size, input_size});
  for (double& v : p.U.values()) v = rng.uniform(-bound, bound);
  p.b = Tensor({gates * hidden_size});

  if (has_decay(kind)) {
    const double a = options.alpha_init;
    if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("alpha_init must lie in (0, 1)");
    p.alpha_logit = Tensor::scalar(options.alpha_param == AlphaParam::sigmoid ? logit(a) : a);
  }
  if (has_dale_signs(kind)) {
    p.dale_signs.assign(hidden_size, 1.0);
    const std::size_t n_inhib = inhibitory_count(hidden_size);
    for (std::size_t i = hidden_size - n_inhib; i < hidden_size; ++i) p.dale_signs[i] = -1.0;
    if (options.inhibitory_shuffle_seed) {
      Rng perm(*options.inhibitory_shuffle_seed);
      perm.shuffle(p.dale_signs);
    }
  }
  return p;
}

Tensor effective_recurrent_matrix(const CellParameters& p) {
  if (p.dale_signs.size() != p.hidden_size || p.W.empty()) {
    throw std::invalid_argument("effective_recurrent_matrix needs W and dale_signs");
  }
  Tensor out = p.W;
  const std::size_t cols = out.cols();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double w = out[i] > 0.0 ? out[i] : 0.0;
    out[i] = w * p.dale_signs[i % cols];
  }
  return out;
}

CellState initial_state(const CellParameters& p) {
  CellState s{Tensor({p.hidden_size}), {}};
  if (p.kind == CellKind::lstm) s.c_mem = Tensor({p.hidden_size});
  return s;
}

// ---------------------------------------------------------------------------
// Tape-bound cell

BoundCell::BoundCell(Tape& tape, const CellParameters& params) : tape_(&tape), params_(&params) {
  params.validate();
  if (!params.W.empty()) {
    w_ = tape.leaf(params.W);
    leaves_.push_back(w_);
  }
  u_ = tape.leaf(params.U);
  leaves_.push_back(u_);
  b_ = tape.leaf(params.b);
  leaves_.push_back(b_);
  if (!params.alpha_logit.empty()) {
    const NodeId raw = tape.leaf(params.alpha_logit);
    leaves_.push_back(raw);
    alpha_ = params.alpha_param == AlphaParam::sigmoid ? tape.sigmoid(raw) : raw;
    one_minus_alpha_ = tape.one_minus(alpha_);
  }
  if (!params.dale_signs.empty() && !params.W.empty()) {
    w_eff_ = tape.column_signs(tape.relu(w_), params.dale_signs);
  }
  zeros_ = tape.constant(Tensor({params.hidden_size}));
}

StateNodes BoundCell::initial_state() const { return {zeros_, zeros_}; }

NodeId BoundCell::activate(NodeId pre) const {
  switch (params_->activation) {
    case Activation::tanh: return tape_->tanh(pre);
    case Activation::relu: return tape_->relu(pre);
    case Activation::identity: return pre;
  }
  return pre;
}

NodeId BoundCell::decay_blend(NodeId h_prev, NodeId drive) const {
  if (params_->alpha_logit.empty()) throw std::logic_error("decay update on a cell without alpha");
  Tape& t = *tape_;
  return activate(t.add(t.scale(h_prev, alpha_), t.scale(drive, one_minus_alpha_)));
}

StateNodes BoundCell::step(const StateNodes& prev, NodeId x) const {
  Tape& t = *tape_;
  const CellParameters& p = *params_;
  const NodeId input_drive = t.add(t.matvec(u_, x), b_);
  switch (p.kind) {
    case CellKind::drnn: {
      if (p.dale_signs.empty()) throw std::logic_error("drnn step without dale_signs");
      const NodeId c = t.add(t.matvec(w_eff_, prev.h), input_drive);
      return {decay_blend(prev.h, c), prev.c_mem};
    }
    case CellKind::sdrnn: {
      const NodeId c = t.add(t.matvec(w_, prev.h), input_drive);
      return {decay_blend(prev.h, c), prev.c_mem};
    }
    case CellKind::abdrnn:
      return {decay_blend(prev.h, input_drive), prev.c_mem};
    case CellKind::srn:
      return {activate(t.add(t.matvec(w_, prev.h), input_drive)), prev.c_mem};
    case CellKind::lstm: {
      const std::size_t h = p.hidden_size;
      const NodeId pre = t.add(t.matvec(w_, prev.h), input_drive);
      const NodeId i_gate = t.sigmoid(t.slice(pre, 0, h));
      const NodeId f_gate = t.sigmoid(t.slice(pre, h, h));
      const NodeId cand = t.tanh(t.slice(pre, 2 * h, h));
      const NodeId o_gate = t.sigmoid(t.slice(pre, 3 * h, h));
      const NodeId c = t.add(t.mul(f_gate, prev.c_mem), t.mul(i_gate, cand));
      return {t.mul(o_gate, t.tanh(c)), c};
    }
    case CellKind::gru: {
      const std::size_t h = p.hidden_size;
      const NodeId rec = t.matvec(w_, prev.h);
      const NodeId r = t.sigmoid(t.add(t.slice(input_drive, 0, h), t.slice(rec, 0, h)));
      const NodeId z = t.sigmoid(t.add(t.slice(input_drive, h, h), t.slice(rec, h, h)));
      const NodeId n = t.tanh(t.add(t.slice(input_drive, 2 * h, h), t.mul(r, t.slice(rec, 2 * h, h))));
      const NodeId h_new = t.add(t.mul(t.one_minus(z), n), t.mul(z, prev.h));
      return {h_new, prev.c_mem};
    }
  }
  throw std::logic_error("unhandled cell kind");
}

// ---------------------------------------------------------------------------
// Pure steps evaluate the same tape code as training, forcing the update rule
// named by the function regardless of p.kind.

namespace {

CellState run_step(const CellParameters& p, CellKind as, const CellState& prev, const Tensor& x) {
  CellParameters view = p;
  view.kind = as;
  if (x.size() != p.input_size) {
    throw ShapeError("input has " + std::to_string(x.size()) + " values, cell expects " +
                     std::to_string(p.input_size));
  }
  if (prev.h.size() != p.hidden_size) throw ShapeError("hidden state size mismatch");
  Tape tape;
  BoundCell cell(tape, view);
  StateNodes s{tape.constant(prev.h), {}};
  if (as == CellKind::lstm) {
    s.c_mem = tape.constant(prev.c_mem.empty() ? Tensor({p.hidden_size}) : prev.c_mem);
  }
  const StateNodes out = cell.step(s, tape.constant(x));
  CellState result{tape.value(out.h), {}};
  if (as == CellKind::lstm) result.c_mem = tape.value(out.c_mem);
  return result;
}

}  // namespace

CellState drnn_step(const CellParameters& p, const CellState& prev, const Tensor& x) {
  return run_step(p, CellKind::drnn, prev, x);
}

CellState sdrnn_step(const CellParameters& p, const CellState& prev, const Tensor& x) {
  CellParameters q = p;
  q.dale_signs.clear();
  return run_step(q, CellKind::sdrnn, prev, x);
}

CellState abdrnn_step(const CellParameters& p, const CellState& prev, const Tensor& x) {
  CellParameters q = p;
  q.dale_signs.clear();
  q.W = Tensor();
  return run_step(q, CellKind::abdrnn, prev, x);
}

CellState srn_step(const CellParameters& p, const CellState& prev, const Tensor& x) {
  CellParameters q = p;
  q.dale_signs.clear();
  q.alpha_logit = Tensor();
  return run_step(q, CellKind::srn, prev, x);
}

CellState lstm_step(const CellParameters& p, const CellState& prev, const Tensor& x) {
  return run_step(p, CellKind::lstm, prev, x);
}

CellState gru_step(const CellParameters& p, const CellState& prev, const Tensor& x) {
  return run_step(p, CellKind::gru, prev, x);
}

CellState step(const CellParameters& p, const CellState& prev, const Tensor& x) {
  return run_step(p, p.kind, prev, x);
}

}  // namespace drnn
