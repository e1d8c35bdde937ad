#include "drnn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kernels.hpp"

namespace drnn {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void accumulate(Tensor& into, const Tensor& like) {
  if (into.empty() && !like.empty()) into = Tensor::zeros_like(like);
}

}  // namespace

const Tensor& Gradients::of(NodeId node) const {
  if (node.index >= grads_.size()) throw TapeError("gradient requested for unknown node");
  return grads_[node.index];
}

const Tape::Node& Tape::checked(NodeId id) const {
  if (id.index >= nodes_.size()) {
    throw TapeError("dangling node " + std::to_string(id.index) + " (tape has " +
                    std::to_string(nodes_.size()) + " nodes)");
  }
  return nodes_[id.index];
}

NodeId Tape::push(Node node, const char* what) {
  node.value().require_finite(what);
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Tape::leaf(const Tensor& value) {
  Node n;
  n.op = Op::leaf;
  n.requires_grad = true;
  n.borrowed = &value;
  return push(std::move(n), "leaf");
}

NodeId Tape::leaf_copy(Tensor value) {
  Node n;
  n.op = Op::leaf;
  n.requires_grad = true;
  n.owned = std::move(value);
  return push(std::move(n), "leaf");
}

NodeId Tape::constant(Tensor value) {
  Node n;
  n.op = Op::constant;
  n.owned = std::move(value);
  return push(std::move(n), "constant");
}

NodeId Tape::matvec(NodeId matrix, NodeId vec) {
  const Node& m = checked(matrix);
  const Node& v = checked(vec);
  const Tensor& mv = m.value();
  const Tensor& vv = v.value();
  if (mv.rank() != 2 || vv.size() != mv.cols()) {
    throw ShapeError("matvec: " + shape_string(mv.shape()) + " times " + shape_string(vv.shape()));
  }
  Node n;
  n.op = Op::matvec;
  n.in0 = matrix.index;
  n.in1 = vec.index;
  n.requires_grad = m.requires_grad || v.requires_grad;
  n.owned = Tensor({mv.rows()});
  kernels::matvec(mv.data(), vv.data(), n.owned.data(), mv.rows(), mv.cols());
  return push(std::move(n), "matvec");
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Node& x = checked(a);
  const Node& y = checked(b);
  require_same_shape(x.value(), y.value(), "add");
  Node n;
  n.op = Op::add;
  n.in0 = a.index;
  n.in1 = b.index;
  n.requires_grad = x.requires_grad || y.requires_grad;
  n.owned = x.value();
  const double* yv = y.value().data();
  for (std::size_t i = 0; i < n.owned.size(); ++i) n.owned[i] += yv[i];
  return push(std::move(n), "add");
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const Node& x = checked(a);
  const Node& y = checked(b);
  require_same_shape(x.value(), y.value(), "sub");
  Node n;
  n.op = Op::sub;
  n.in0 = a.index;
  n.in1 = b.index;
  n.requires_grad = x.requires_grad || y.requires_grad;
  n.owned = x.value();
  const double* yv = y.value().data();
  for (std::size_t i = 0; i < n.owned.size(); ++i) n.owned[i] -= yv[i];
  return push(std::move(n), "sub");
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Node& x = checked(a);
  const Node& y = checked(b);
  require_same_shape(x.value(), y.value(), "mul");
  Node n;
  n.op = Op::mul;
  n.in0 = a.index;
  n.in1 = b.index;
  n.requires_grad = x.requires_grad || y.requires_grad;
  n.owned = x.value();
  const double* yv = y.value().data();
  for (std::size_t i = 0; i < n.owned.size(); ++i) n.owned[i] *= yv[i];
  return push(std::move(n), "mul");
}

NodeId Tape::scale(NodeId vec, NodeId s) {
  const Node& x = checked(vec);
  const Node& k = checked(s);
  if (k.value().size() != 1) throw ShapeError("scale: factor must be a scalar");
  Node n;
  n.op = Op::scale;
  n.in0 = vec.index;
  n.in1 = s.index;
  n.requires_grad = x.requires_grad || k.requires_grad;
  n.owned = x.value();
  const double factor = k.value()[0];
  for (double& v : n.owned.values()) v *= factor;
  return push(std::move(n), "scale");
}

NodeId Tape::one_minus(NodeId s) {
  const Node& x = checked(s);
  Node n;
  n.op = Op::one_minus;
  n.in0 = s.index;
  n.requires_grad = x.requires_grad;
  n.owned = x.value();
  for (double& v : n.owned.values()) v = 1.0 - v;
  return push(std::move(n), "one_minus");
}

NodeId Tape::relu(NodeId x) {
  const Node& in = checked(x);
  in.value().require_finite("relu input");
  Node n;
  n.op = Op::relu;
  n.in0 = x.index;
  n.requires_grad = in.requires_grad;
  n.owned = in.value();
  for (double& v : n.owned.values()) {
    min_relu_input_ = std::min(min_relu_input_, std::fabs(v));
    v = v > 0.0 ? v : 0.0;
  }
  return push(std::move(n), "relu");
}

NodeId Tape::tanh(NodeId x) {
  const Node& in = checked(x);
  Node n;
  n.op = Op::tanh;
  n.in0 = x.index;
  n.requires_grad = in.requires_grad;
  n.owned = in.value();
  for (double& v : n.owned.values()) v = std::tanh(v);
  return push(std::move(n), "tanh");
}

NodeId Tape::sigmoid(NodeId x) {
  const Node& in = checked(x);
  Node n;
  n.op = Op::sigmoid;
  n.in0 = x.index;
  n.requires_grad = in.requires_grad;
  n.owned = in.value();
  for (double& v : n.owned.values()) v = 1.0 / (1.0 + std::exp(-v));
  return push(std::move(n), "sigmoid");
}

NodeId Tape::column_signs(NodeId matrix, std::span<const double> signs) {
  const Node& m = checked(matrix);
  const Tensor& mv = m.value();
  if (mv.rank() != 2 || signs.size() != mv.cols()) {
    throw ShapeError("column_signs: " + std::to_string(signs.size()) + " signs for matrix " +
                     shape_string(mv.shape()));
  }
  Node n;
  n.op = Op::column_signs;
  n.in0 = matrix.index;
  n.requires_grad = m.requires_grad;
  n.aux = Tensor::vector(std::vector<double>(signs.begin(), signs.end()));
  n.owned = mv;
  const std::size_t cols = mv.cols();
  for (std::size_t i = 0; i < n.owned.size(); ++i) n.owned[i] *= signs[i % cols];
  return push(std::move(n), "column_signs");
}

NodeId Tape::row(NodeId matrix, std::size_t r) {
  const Node& m = checked(matrix);
  const Tensor& mv = m.value();
  if (mv.rank() != 2 || r >= mv.rows()) {
    throw ShapeError("row " + std::to_string(r) + " of matrix " + shape_string(mv.shape()));
  }
  Node n;
  n.op = Op::row;
  n.in0 = matrix.index;
  n.param = r;
  n.requires_grad = m.requires_grad;
  const std::size_t cols = mv.cols();
  n.owned = Tensor::vector(std::vector<double>(mv.data() + r * cols, mv.data() + (r + 1) * cols));
  return push(std::move(n), "row");
}

NodeId Tape::slice(NodeId vec, std::size_t offset, std::size_t length) {
  const Node& v = checked(vec);
  const Tensor& vv = v.value();
  if (vv.rank() != 1 || offset + length > vv.size()) {
    throw ShapeError("slice out of range of " + shape_string(vv.shape()));
  }
  Node n;
  n.op = Op::slice;
  n.in0 = vec.index;
  n.param = offset;
  n.param2 = length;
  n.requires_grad = v.requires_grad;
  n.owned = Tensor::vector(
      std::vector<double>(vv.data() + offset, vv.data() + offset + length));
  return push(std::move(n), "slice");
}

NodeId Tape::mask(NodeId x, Tensor factors) {
  const Node& in = checked(x);
  require_same_shape(in.value(), factors, "mask");
  Node n;
  n.op = Op::mask;
  n.in0 = x.index;
  n.requires_grad = in.requires_grad;
  n.owned = in.value();
  for (std::size_t i = 0; i < n.owned.size(); ++i) n.owned[i] *= factors[i];
  n.aux = std::move(factors);
  return push(std::move(n), "mask");
}

NodeId Tape::dot(NodeId a, NodeId b) {
  const Node& x = checked(a);
  const Node& y = checked(b);
  if (x.value().size() != y.value().size()) throw ShapeError("dot: length mismatch");
  Node n;
  n.op = Op::dot;
  n.in0 = a.index;
  n.in1 = b.index;
  n.requires_grad = x.requires_grad || y.requires_grad;
  n.owned = Tensor::scalar(kernels::dot(x.value().data(), y.value().data(), x.value().size()));
  return push(std::move(n), "dot");
}

NodeId Tape::sum(NodeId x) {
  const Node& in = checked(x);
  double s = 0.0;
  for (double v : in.value().values()) s += v;
  Node n;
  n.op = Op::sum;
  n.in0 = x.index;
  n.requires_grad = in.requires_grad;
  n.owned = Tensor::scalar(s);
  return push(std::move(n), "sum");
}

NodeId Tape::add_n(std::span<const NodeId> terms) {
  if (terms.empty()) throw ShapeError("add_n: no terms");
  Node n;
  n.op = Op::add_n;
  n.owned = checked(terms[0]).value();
  n.inputs.push_back(terms[0].index);
  n.requires_grad = checked(terms[0]).requires_grad;
  for (std::size_t k = 1; k < terms.size(); ++k) {
    const Node& t = checked(terms[k]);
    require_same_shape(n.owned, t.value(), "add_n");
    const double* tv = t.value().data();
    for (std::size_t i = 0; i < n.owned.size(); ++i) n.owned[i] += tv[i];
    n.inputs.push_back(terms[k].index);
    n.requires_grad = n.requires_grad || t.requires_grad;
  }
  return push(std::move(n), "add_n");
}

NodeId Tape::softmax_xent(NodeId logits, std::size_t target) {
  const Node& in = checked(logits);
  const Tensor& z = in.value();
  if (z.rank() != 1 || target >= z.size()) {
    throw ShapeError("softmax_xent: target " + std::to_string(target) + " for logits " +
                     shape_string(z.shape()));
  }
  z.require_finite("softmax_xent logits");
  const double zmax = *std::max_element(z.values().begin(), z.values().end());
  double denom = 0.0;
  for (double v : z.values()) denom += std::exp(v - zmax);
  const double log_denom = std::log(denom) + zmax;
  Node n;
  n.op = Op::softmax_xent;
  n.in0 = logits.index;
  n.param = target;
  n.requires_grad = in.requires_grad;
  n.aux = Tensor({z.size()});
  for (std::size_t i = 0; i < z.size(); ++i) n.aux[i] = std::exp(z[i] - log_denom);
  n.owned = Tensor::scalar(std::max(0.0, log_denom - z[target]));
  return push(std::move(n), "softmax_xent");
}

const Tensor& Tape::value(NodeId node) const { return checked(node).value(); }

const Tensor& Tape::probabilities(NodeId xent_node) const {
  const Node& n = checked(xent_node);
  if (n.op != Op::softmax_xent) throw TapeError("probabilities() on a non-softmax node");
  return n.aux;
}

Gradients Tape::backward(NodeId loss) const {
  const Node& root = checked(loss);
  if (root.value().size() != 1) {
    throw TapeError("backward: loss must be scalar, got shape " +
                    shape_string(root.value().shape()));
  }
  std::vector<Tensor> g(nodes_.size());
  g[loss.index] = Tensor::zeros_like(root.value());
  g[loss.index][0] = 1.0;

  // Matrix gradients from matvec are deferred until the matrix node itself is
  // reached, then applied row by row so each gradient row stays in cache.
  std::vector<std::vector<std::uint32_t>> pending(nodes_.size());

  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!pending[i].empty()) {
      accumulate(g[i], n.value());
      const std::size_t rows = n.value().rows(), cols = n.value().cols();
      for (std::size_t r = 0; r < rows; ++r) {
        double* row = g[i].data() + r * cols;
        for (std::uint32_t t : pending[i]) {
          const double a = g[t][r];
          if (a != 0.0) kernels::axpy(a, nodes_[nodes_[t].in1].value().data(), row, cols);
        }
      }
    }
    if (g[i].empty() || !n.requires_grad) continue;
    const Tensor& gi = g[i];
    switch (n.op) {
      case Op::leaf:
      case Op::constant:
        break;
      case Op::matvec: {
        const Tensor& m = nodes_[n.in0].value();
        const Tensor& v = nodes_[n.in1].value();
        const std::size_t rows = m.rows(), cols = m.cols();
        if (nodes_[n.in0].requires_grad) pending[n.in0].push_back(static_cast<std::uint32_t>(i));
        if (nodes_[n.in1].requires_grad) {
          accumulate(g[n.in1], v);
          double* gv = g[n.in1].data();
          for (std::size_t r = 0; r < rows; ++r) {
            if (gi[r] != 0.0) kernels::axpy(gi[r], m.data() + r * cols, gv, cols);
          }
        }
        break;
      }
      case Op::add:
      case Op::sub: {
        const double sign_b = n.op == Op::add ? 1.0 : -1.0;
        if (nodes_[n.in0].requires_grad) {
          accumulate(g[n.in0], gi);
          kernels::axpy(1.0, gi.data(), g[n.in0].data(), gi.size());
        }
        if (nodes_[n.in1].requires_grad) {
          accumulate(g[n.in1], gi);
          kernels::axpy(sign_b, gi.data(), g[n.in1].data(), gi.size());
        }
        break;
      }
      case Op::mul: {
        const Tensor& a = nodes_[n.in0].value();
        const Tensor& b = nodes_[n.in1].value();
        if (nodes_[n.in0].requires_grad) {
          accumulate(g[n.in0], a);
          for (std::size_t k = 0; k < gi.size(); ++k) g[n.in0][k] += gi[k] * b[k];
        }
        if (nodes_[n.in1].requires_grad) {
          accumulate(g[n.in1], b);
          for (std::size_t k = 0; k < gi.size(); ++k) g[n.in1][k] += gi[k] * a[k];
        }
        break;
      }
      case Op::scale: {
        const Tensor& v = nodes_[n.in0].value();
        const Tensor& s = nodes_[n.in1].value();
        if (nodes_[n.in0].requires_grad) {
          accumulate(g[n.in0], v);
          kernels::axpy(s[0], gi.data(), g[n.in0].data(), gi.size());
        }
        if (nodes_[n.in1].requires_grad) {
          accumulate(g[n.in1], s);
          g[n.in1][0] += kernels::dot(gi.data(), v.data(), gi.size());
        }
        break;
      }
      case Op::one_minus: {
        accumulate(g[n.in0], gi);
        kernels::axpy(-1.0, gi.data(), g[n.in0].data(), gi.size());
        break;
      }
      case Op::relu: {
        const Tensor& x = nodes_[n.in0].value();
        accumulate(g[n.in0], x);
        for (std::size_t k = 0; k < gi.size(); ++k) {
          if (x[k] > 0.0) g[n.in0][k] += gi[k];
        }
        break;
      }
      case Op::tanh: {
        const Tensor& y = n.owned;
        accumulate(g[n.in0], y);
        for (std::size_t k = 0; k < gi.size(); ++k) g[n.in0][k] += gi[k] * (1.0 - y[k] * y[k]);
        break;
      }
      case Op::sigmoid: {
        const Tensor& y = n.owned;
        accumulate(g[n.in0], y);
        for (std::size_t k = 0; k < gi.size(); ++k) g[n.in0][k] += gi[k] * y[k] * (1.0 - y[k]);
        break;
      }
      case Op::column_signs: {
        accumulate(g[n.in0], gi);
        const std::size_t cols = n.aux.size();
        double* dst = g[n.in0].data();
        for (std::size_t k = 0; k < gi.size(); k += cols) {
          for (std::size_t j = 0; j < cols; ++j) dst[k + j] += gi[k + j] * n.aux[j];
        }
        break;
      }
      case Op::row: {
        const Tensor& m = nodes_[n.in0].value();
        accumulate(g[n.in0], m);
        kernels::axpy(1.0, gi.data(), g[n.in0].data() + n.param * m.cols(), gi.size());
        break;
      }
      case Op::slice: {
        accumulate(g[n.in0], nodes_[n.in0].value());
        kernels::axpy(1.0, gi.data(), g[n.in0].data() + n.param, n.param2);
        break;
      }
      case Op::mask: {
        accumulate(g[n.in0], gi);
        for (std::size_t k = 0; k < gi.size(); ++k) g[n.in0][k] += gi[k] * n.aux[k];
        break;
      }
      case Op::dot: {
        const Tensor& a = nodes_[n.in0].value();
        const Tensor& b = nodes_[n.in1].value();
        if (nodes_[n.in0].requires_grad) {
          accumulate(g[n.in0], a);
          kernels::axpy(gi[0], b.data(), g[n.in0].data(), a.size());
        }
        if (nodes_[n.in1].requires_grad) {
          accumulate(g[n.in1], b);
          kernels::axpy(gi[0], a.data(), g[n.in1].data(), b.size());
        }
        break;
      }
      case Op::sum: {
        const Tensor& x = nodes_[n.in0].value();
        accumulate(g[n.in0], x);
        for (double& v : g[n.in0].values()) v += gi[0];
        break;
      }
      case Op::add_n: {
        for (std::uint32_t in : n.inputs) {
          if (!nodes_[in].requires_grad) continue;
          accumulate(g[in], gi);
          kernels::axpy(1.0, gi.data(), g[in].data(), gi.size());
        }
        break;
      }
      case Op::softmax_xent: {
        accumulate(g[n.in0], n.aux);
        double* gz = g[n.in0].data();
        for (std::size_t k = 0; k < n.aux.size(); ++k) gz[k] += gi[0] * n.aux[k];
        gz[n.param] -= gi[0];
        break;
      }
    }
  }

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::leaf && g[i].empty()) g[i] = Tensor::zeros_like(nodes_[i].value());
  }
  Gradients out;
  out.grads_ = std::move(g);
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double zmax = *std::max_element(p.begin(), p.end());
  double denom = 0.0;
  for (double& v : p) {
    v = std::exp(v - zmax);
    denom += v;
  }
  for (double& v : p) v /= denom;
  return p;
}

}  // namespace drnn
