#include <cmath>
#include <limits>

#include "doctest.h"
#include "drnn/gradcheck.hpp"
#include "drnn/rng.hpp"
#include "drnn/tape.hpp"

using namespace drnn;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

}  // namespace

TEST_CASE("tensor shape invariant") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5, 0.0)), ShapeError);
  const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(m.at(1, 2) == 6.0);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
}

TEST_CASE("relu forward") {
  Tape t;
  const NodeId y = t.relu(t.constant(Tensor::vector({-1, 0, 2})));
  CHECK(t.value(y) == Tensor::vector({0, 0, 2}));

  Tape t2;
  const NodeId z = t2.relu(t2.constant(Tensor::matrix(2, 2, {-1, -2, -0.5, -3})));
  CHECK(t2.value(z) == Tensor::zeros({2, 2}));
}

TEST_CASE("relu gradient matches finite differences away from the kink") {
  const Tensor x = Tensor::vector({-1.0, 2.0});
  Tape t;
  const NodeId leaf = t.leaf(x);
  const NodeId loss = t.sum(t.relu(leaf));
  const Tensor analytic = t.backward(loss).of(leaf);

  const Tensor numeric = finite_difference_gradient(
      [](const Tensor& v) {
        double s = 0;
        for (double e : v.values()) s += std::max(0.0, e);
        return s;
      },
      x, 1e-6);
  CHECK(analytic == Tensor::vector({0.0, 1.0}));
  CHECK(numeric[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(numeric[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("relu subgradient at zero is zero") {
  Tape t;
  const NodeId leaf = t.leaf_copy(Tensor::vector({0.0}));
  const NodeId loss = t.sum(t.relu(leaf));
  CHECK(t.backward(loss).of(leaf)[0] == 0.0);
}

TEST_CASE("non-finite values are rejected at operation boundaries") {
  Tape t;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(t.constant(Tensor::vector({1.0, nan})), NonFiniteError);
  const NodeId big = t.constant(Tensor::vector({1e308, 1e308}));
  CHECK_THROWS_AS(t.add(big, big), NonFiniteError);
}

TEST_CASE("sigmoid values and gradient") {
  Tape t;
  const NodeId zero = t.leaf_copy(Tensor::scalar(0.0));
  const NodeId s0 = t.sigmoid(zero);
  CHECK(t.value(s0).item() == 0.5);
  CHECK(t.backward(s0).of(zero).item() == doctest::Approx(0.25).epsilon(1e-15));

  // logit(0.8) = ln 4
  const NodeId s1 = t.sigmoid(t.constant(Tensor::scalar(1.3862943611198906)));
  CHECK(t.value(s1).item() == doctest::Approx(0.8).epsilon(1e-15));

  const NodeId s_lo = t.sigmoid(t.constant(Tensor::scalar(-30.0)));
  const NodeId s_hi = t.sigmoid(t.constant(Tensor::scalar(30.0)));
  CHECK(t.value(s_lo).item() > 0.0);
  CHECK(t.value(s_hi).item() < 1.0);
}

TEST_CASE("backward of sum is all ones") {
  Rng rng(3);
  const Tensor x = random_tensor(rng, {3, 4});
  Tape t;
  const NodeId leaf = t.leaf(x);
  const Tensor g = t.backward(t.sum(leaf)).of(leaf);
  for (double v : g.values()) CHECK(v == 1.0);
}

TEST_CASE("quadratic form gradient equals (W + W^T) x and finite differences") {
  const Tensor w = Tensor::matrix(3, 3, {0.5, -1.0, 2.0, 0.25, 1.5, -0.75, 1.0, 0.0, -2.0});
  const Tensor x = Tensor::vector({0.3, -0.7, 1.1});
  Tape t;
  const NodeId xl = t.leaf(x);
  const NodeId loss = t.dot(xl, t.matvec(t.constant(w), xl));
  const Tensor g = t.backward(loss).of(xl);

  const auto quad = [&](const Tensor& v) {
    double s = 0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) s += v[i] * w.at(i, j) * v[j];
    return s;
  };
  const Tensor numeric = finite_difference_gradient(quad, x, 1e-5);
  for (std::size_t i = 0; i < 3; ++i) {
    double expected = 0;
    for (std::size_t j = 0; j < 3; ++j) expected += (w.at(i, j) + w.at(j, i)) * x[j];
    CHECK(g[i] == doctest::Approx(expected).epsilon(1e-14));
    CHECK(relative_error(g[i], numeric[i]) < 1e-8);
  }
}

TEST_CASE("leaf unrelated to the loss has zero gradient") {
  Tape t;
  const NodeId used = t.leaf_copy(Tensor::vector({1.0, 2.0}));
  const NodeId unused = t.leaf_copy(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  const Gradients g = t.backward(t.sum(used));
  CHECK(g.of(unused) == Tensor::zeros({2, 2}));
}

TEST_CASE("backward errors") {
  Tape t;
  const NodeId v = t.leaf_copy(Tensor::vector({1.0, 2.0}));
  CHECK_THROWS_AS(t.backward(v), TapeError);
  CHECK_THROWS_AS(t.backward(NodeId{99}), TapeError);
  CHECK_THROWS_AS(t.add(v, NodeId{42}), TapeError);
}

TEST_CASE("finite differences") {
  const auto square = [](const Tensor& v) { return v[0] * v[0]; };
  const Tensor g = finite_difference_gradient(square, Tensor::vector({3.0}), 1e-5);
  CHECK(std::fabs(g[0] - 6.0) <= 1e-8);

  const Tensor c = finite_difference_gradient([](const Tensor&) { return 7.0; },
                                              Tensor::vector({1, 2, 3}), 1e-5);
  CHECK(c == Tensor::zeros({3}));

  CHECK_THROWS_AS(finite_difference_gradient(square, Tensor::vector({1.0}), 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(finite_difference_gradient(
                      [](const Tensor&) { return std::numeric_limits<double>::infinity(); },
                      Tensor::vector({1.0}), 1e-5),
                  NonFiniteError);
}

TEST_CASE("softmax cross-entropy: probabilities sum to one, loss non-negative") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.index(30);
    const Tensor z = random_tensor(rng, {n}, 40.0);
    Tape t;
    const NodeId loss = t.softmax_xent(t.constant(z), rng.index(n));
    double total = 0;
    for (double p : t.probabilities(loss).values()) total += p;
    CHECK(std::fabs(total - 1.0) <= 1e-12);
    CHECK(t.value(loss).item() >= 0.0);
  }
}

// Hand-rolled property: random compositions of every differentiable op agree
// with central differences.
TEST_CASE("random expression gradients agree with finite differences") {
  Rng rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + rng.index(5);
    const Tensor m = random_tensor(rng, {2 * n, n});
    const Tensor v = random_tensor(rng, {n});
    const Tensor s = random_tensor(rng, {});
    const std::size_t target = rng.index(n);
    const Tensor drop = random_tensor(rng, {n});

    const auto build = [&](Tape& t, NodeId ml, NodeId vl, NodeId sl) {
      const NodeId a = t.matvec(ml, vl);
      const NodeId top = t.tanh(t.slice(a, 0, n));
      const NodeId bottom = t.sigmoid(t.slice(a, n, n));
      const NodeId gated = t.mul(top, bottom);
      const NodeId mixed = t.add(t.scale(gated, t.sigmoid(sl)), t.scale(vl, t.one_minus(t.sigmoid(sl))));
      const NodeId emb = t.row(ml, target);
      const NodeId masked = t.mask(t.sub(mixed, emb), drop);
      const NodeId terms[] = {t.softmax_xent(masked, target), t.dot(mixed, vl), t.sum(t.tanh(emb))};
      return t.add_n(terms);
    };

    Tape t;
    const NodeId ml = t.leaf(m), vl = t.leaf(v), sl = t.leaf(s);
    const Gradients g = t.backward(build(t, ml, vl, sl));

    const auto check = [&](const Tensor& x, NodeId id, int which) {
      const auto f = [&](const Tensor& probe) {
        Tape u;
        const NodeId a = u.leaf(which == 0 ? probe : m);
        const NodeId b = u.leaf(which == 1 ? probe : v);
        const NodeId c = u.leaf(which == 2 ? probe : s);
        return u.value(build(u, a, b, c)).item();
      };
      const Tensor numeric = finite_difference_gradient(f, x, 1e-5);
      for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(relative_error(g.of(id)[i], numeric[i]) <= 1e-6);
      }
    };
    check(m, ml, 0);
    check(v, vl, 1);
    check(s, sl, 2);
  }
}

TEST_CASE("backward is deterministic") {
  Rng rng(5);
  const Tensor m = random_tensor(rng, {6, 6});
  const Tensor v = random_tensor(rng, {6});
  const auto run = [&] {
    Tape t;
    const NodeId ml = t.leaf(m);
    NodeId h = t.leaf(v);
    for (int k = 0; k < 5; ++k) h = t.tanh(t.matvec(ml, h));
    return t.backward(t.softmax_xent(h, 2)).of(ml);
  };
  CHECK(run() == run());
}
