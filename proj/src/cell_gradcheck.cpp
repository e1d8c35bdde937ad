#include "drnn/cell_gradcheck.hpp"

#include <algorithm>

#include "drnn/gradcheck.hpp"
#include "drnn/rng.hpp"

namespace drnn {

namespace {

struct Sequence {
  std::vector<Tensor> inputs;
  std::vector<Tensor> readouts;
};

struct Forward {
  double loss = 0.0;
  double min_relu_input = 0.0;
};

Forward run(const CellParameters& p, const Sequence& seq, Gradients* grads,
            std::vector<NodeId>* leaves) {
  Tape tape;
  BoundCell cell(tape, p);
  StateNodes s = cell.initial_state();
  std::vector<NodeId> terms;
  for (std::size_t t = 0; t < seq.inputs.size(); ++t) {
    s = cell.step(s, tape.constant(seq.inputs[t]));
    terms.push_back(tape.dot(s.h, tape.constant(seq.readouts[t])));
  }
  const NodeId loss = tape.add_n(terms);
  if (grads) {
    *grads = tape.backward(loss);
    *leaves = cell.leaves();
  }
  return {tape.value(loss).item(), tape.min_relu_input_magnitude()};
}

}  // namespace

CellGradcheckResult gradcheck_cell(CellKind kind, const GradcheckOptions& options) {
  CellGradcheckResult result;
  result.kind = kind;
  Rng rng = Rng::derive(options.seed, static_cast<std::uint64_t>(kind));

  while (result.configs_checked < options.configs) {
    const std::size_t hidden = 2 + rng.index(7);
    const std::size_t input = 1 + rng.index(4);
    const std::size_t length = 1 + rng.index(6);
    InitOptions init;
    init.activation = rng.bernoulli(0.5) ? Activation::tanh : Activation::relu;
    init.alpha_init = rng.uniform(0.1, 0.9);
    CellParameters p = init_parameters(kind, hidden, input, rng.next(), init);
    for (double& v : p.b.values()) v = rng.uniform(-0.5, 0.5);

    Sequence seq;
    for (std::size_t t = 0; t < length; ++t) {
      Tensor x({input}), r({hidden});
      for (double& v : x.values()) v = rng.uniform(-1.0, 1.0);
      for (double& v : r.values()) v = rng.uniform(-1.0, 1.0);
      seq.inputs.push_back(std::move(x));
      seq.readouts.push_back(std::move(r));
    }

    Gradients grads;
    std::vector<NodeId> leaves;
    const Forward fwd = run(p, seq, &grads, &leaves);
    if (fwd.min_relu_input < options.kink_margin) {
      ++result.configs_redrawn;
      continue;
    }

    const auto names = p.learnable_names();
    if (result.parameters.empty()) {
      for (const auto& n : names) result.parameters.push_back({n, 0.0, 0});
    }
    auto tensors = p.learnable();
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      Tensor analytic = grads.of(leaves[k]);
      if (options.inject_sign_flip && k == 0) {
        for (double& v : analytic.values()) v = -v;
      }
      Tensor* target = tensors[k];
      const Tensor original = *target;
      const Tensor numeric = finite_difference_gradient(
          [&](const Tensor& probe) {
            *target = probe;
            const double loss = run(p, seq, nullptr, nullptr).loss;
            *target = original;
            return loss;
          },
          original, options.step);
      ParameterCheck& check = result.parameters[k];
      for (std::size_t i = 0; i < numeric.size(); ++i) {
        check.max_relative_error =
            std::max(check.max_relative_error, relative_error(analytic[i], numeric[i]));
      }
      check.coordinates += numeric.size();
    }
    ++result.configs_checked;
  }

  result.max_relative_error = 0.0;
  for (const auto& c : result.parameters) {
    result.max_relative_error = std::max(result.max_relative_error, c.max_relative_error);
  }
  result.passed = result.max_relative_error <= options.tolerance;
  return result;
}

}  // namespace drnn
