#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drnn/tape.hpp"
#include "drnn/tensor.hpp"

namespace drnn {

enum class CellKind { srn, drnn, sdrnn, abdrnn, lstm, gru };
enum class Activation { tanh, relu, identity };
/// How the stored decay parameter maps to alpha.
enum class AlphaParam { sigmoid, linear };

std::string_view to_string(CellKind kind);
std::string_view to_string(Activation act);
std::string_view to_string(AlphaParam param);
CellKind parse_cell_kind(std::string_view name);
Activation parse_activation(std::string_view name);
AlphaParam parse_alpha_param(std::string_view name);

inline constexpr CellKind kAllCellKinds[] = {CellKind::srn,    CellKind::drnn, CellKind::sdrnn,
                                             CellKind::abdrnn, CellKind::lstm, CellKind::gru};

bool has_decay(CellKind kind);
bool has_dale_signs(CellKind kind);
bool has_recurrent_matrix(CellKind kind);
/// Number of stacked gate blocks in W/U/b: 4 for LSTM, 3 for GRU, else 1.
std::size_t gate_count(CellKind kind);

/// max(1, round(0.2 * hidden)).
std::size_t inhibitory_count(std::size_t hidden_size);

double logit(double p);

/// Every learnable array of one recurrent cell. Gated cells stack their gate
/// blocks along the rows of W, U and b (LSTM: i, f, g, o; GRU: r, z, n).
struct CellParameters {
  CellKind kind = CellKind::drnn;
  Activation activation = Activation::tanh;
  AlphaParam alpha_param = AlphaParam::sigmoid;
  std::size_t hidden_size = 0;
  std::size_t input_size = 0;
  Tensor W;            // empty for Ab-DRNN
  Tensor U;
  Tensor b;
  Tensor alpha_logit;  // scalar; empty for cells without decay
  std::vector<double> dale_signs;  // DRNN only; +1 excitatory, -1 inhibitory

  /// The decay value the forward pass uses.
  double alpha() const;

  /// Learnable arrays in declared (serialization) order: W, U, b, alpha_logit,
  /// skipping the ones this kind does not have.
  std::vector<Tensor*> learnable();
  std::vector<const Tensor*> learnable() const;
  std::vector<std::string> learnable_names() const;

  void validate() const;
};

struct CellState {
  Tensor h;
  Tensor c_mem;  // LSTM only
};

struct InitOptions {
  Activation activation = Activation::tanh;
  AlphaParam alpha_param = AlphaParam::sigmoid;
  double alpha_init = 0.8;
  /// When set, the inhibitory entries are shuffled to random positions
  /// instead of occupying the last ones.
  std::optional<std::uint64_t> inhibitory_shuffle_seed;
};

/// W, U ~ uniform(-1/sqrt(hidden), 1/sqrt(hidden)), b = 0, alpha = alpha_init.
CellParameters init_parameters(CellKind kind, std::size_t hidden_size, std::size_t input_size,
                               std::uint64_t seed, const InitOptions& options = {});

/// ReLU(W) with column j multiplied by dale_signs[j].
Tensor effective_recurrent_matrix(const CellParameters& p);

CellState initial_state(const CellParameters& p);

// Pure single-step updates.
CellState drnn_step(const CellParameters& p, const CellState& prev, const Tensor& x);
CellState sdrnn_step(const CellParameters& p, const CellState& prev, const Tensor& x);
CellState abdrnn_step(const CellParameters& p, const CellState& prev, const Tensor& x);
CellState srn_step(const CellParameters& p, const CellState& prev, const Tensor& x);
CellState lstm_step(const CellParameters& p, const CellState& prev, const Tensor& x);
CellState gru_step(const CellParameters& p, const CellState& prev, const Tensor& x);
/// Dispatches on p.kind.
CellState step(const CellParameters& p, const CellState& prev, const Tensor& x);

struct StateNodes {
  NodeId h;
  NodeId c_mem;  // meaningful for LSTM only
};

/// A cell whose parameters have been placed on a tape as leaves. Anything
/// that depends only on the parameters (the Dale-constrained matrix, alpha)
/// is computed once at bind time and reused by every step.
class BoundCell {
 public:
  BoundCell(Tape& tape, const CellParameters& params);

  StateNodes initial_state() const;
  StateNodes step(const StateNodes& prev, NodeId x) const;

  /// Leaf ids matching CellParameters::learnable() order.
  const std::vector<NodeId>& leaves() const { return leaves_; }
  const CellParameters& params() const { return *params_; }

 private:
  NodeId activate(NodeId pre) const;
  NodeId decay_blend(NodeId h_prev, NodeId drive) const;

  Tape* tape_;
  const CellParameters* params_;
  std::vector<NodeId> leaves_;
  NodeId w_;
  NodeId u_;
  NodeId b_;
  NodeId w_eff_;
  NodeId alpha_;
  NodeId one_minus_alpha_;
  NodeId zeros_;
};

}  // namespace drnn
