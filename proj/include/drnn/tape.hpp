#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "drnn/tensor.hpp"

namespace drnn {

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct NodeId {
  std::uint32_t index = 0;
  bool operator==(const NodeId&) const = default;
};

/// Gradients produced by one backward pass, indexed by tape node.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}

  /// Gradient w.r.t. `node`. Leaves the loss does not depend on get zeros;
  /// interior nodes outside the loss's cone have an empty tensor.
  const Tensor& of(NodeId node) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
};

/// Reverse-mode recorder. Operations are appended in evaluation order and
/// replayed backwards by backward(). A tape is single-use and single-threaded;
/// leaves may borrow tensors that must outlive it.
class Tape {
 public:
  enum class Op : std::uint8_t {
    leaf,
    constant,
    matvec,
    add,
    sub,
    mul,
    scale,
    one_minus,
    relu,
    tanh,
    sigmoid,
    column_signs,
    row,
    slice,
    mask,
    dot,
    sum,
    add_n,
    softmax_xent,
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Learnable leaf that borrows `value`; the referenced tensor must stay
  /// alive and unchanged until the tape is discarded.
  NodeId leaf(const Tensor& value);
  /// Learnable leaf that owns its value.
  NodeId leaf_copy(Tensor value);
  NodeId constant(Tensor value);

  NodeId matvec(NodeId matrix, NodeId vec);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  /// vec * s for a scalar node s.
  NodeId scale(NodeId vec, NodeId s);
  /// 1 - s, elementwise.
  NodeId one_minus(NodeId s);
  NodeId relu(NodeId x);
  NodeId tanh(NodeId x);
  NodeId sigmoid(NodeId x);
  /// Multiplies column j of a matrix by signs[j].
  NodeId column_signs(NodeId matrix, std::span<const double> signs);
  /// Row r of a matrix as a vector (embedding lookup).
  NodeId row(NodeId matrix, std::size_t r);
  NodeId slice(NodeId vec, std::size_t offset, std::size_t length);
  /// Elementwise product with a constant tensor (dropout masks).
  NodeId mask(NodeId x, Tensor factors);
  NodeId dot(NodeId a, NodeId b);
  NodeId sum(NodeId x);
  NodeId add_n(std::span<const NodeId> terms);
  /// -log softmax(logits)[target]. probabilities() exposes the softmax.
  NodeId softmax_xent(NodeId logits, std::size_t target);

  const Tensor& value(NodeId node) const;
  const Tensor& probabilities(NodeId xent_node) const;
  Op op(NodeId node) const { return nodes_.at(node.index).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Smallest |input| seen by any relu node; +inf when there are none.
  double min_relu_input_magnitude() const { return min_relu_input_; }

  Gradients backward(NodeId loss) const;

 private:
  struct Node {
    Op op = Op::constant;
    bool requires_grad = false;
    std::uint32_t in0 = 0;
    std::uint32_t in1 = 0;
    std::size_t param = 0;
    std::size_t param2 = 0;
    const Tensor* borrowed = nullptr;
    Tensor owned;
    Tensor aux;
    std::vector<std::uint32_t> inputs;
    const Tensor& value() const { return borrowed ? *borrowed : owned; }
  };

  const Node& checked(NodeId id) const;
  NodeId push(Node node, const char* what);

  std::vector<Node> nodes_;
  double min_relu_input_ = std::numeric_limits<double>::infinity();
};

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace drnn
