#include <cmath>
#include <sstream>

#include "doctest.h"
#include "drnn/cell_gradcheck.hpp"
#include "drnn/cells.hpp"
#include "drnn/checkpoint.hpp"
#include "drnn/rng.hpp"

using namespace drnn;

namespace {

// Independent scalar-loop evaluation of every update rule.
using Vec = std::vector<double>;

double act(Activation a, double v) {
  switch (a) {
    case Activation::tanh: return std::tanh(v);
    case Activation::relu: return v > 0 ? v : 0;
    case Activation::identity: return v;
  }
  return v;
}

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Row `row` of a stacked matrix times vector.
double rowdot(const Tensor& m, std::size_t row, const Vec& v) {
  double s = 0;
  for (std::size_t j = 0; j < v.size(); ++j) s += m.at(row, j) * v[j];
  return s;
}

std::pair<Vec, Vec> oracle_step(CellKind kind, const CellParameters& p, const Vec& h, const Vec& c,
                                const Vec& x) {
  const std::size_t H = p.hidden_size;
  Vec out(H), cout = c;
  const double alpha = p.alpha_logit.empty() ? 0.0 : sig(p.alpha_logit[0]);
  for (std::size_t i = 0; i < H; ++i) {
    const double drive = rowdot(p.U, i, x) + p.b[i];
    switch (kind) {
      case CellKind::drnn: {
        double rec = 0;
        for (std::size_t j = 0; j < H; ++j) rec += std::max(0.0, p.W.at(i, j)) * p.dale_signs[j] * h[j];
        out[i] = act(p.activation, alpha * h[i] + (1 - alpha) * (rec + drive));
        break;
      }
      case CellKind::sdrnn:
        out[i] = act(p.activation, alpha * h[i] + (1 - alpha) * (rowdot(p.W, i, h) + drive));
        break;
      case CellKind::abdrnn:
        out[i] = act(p.activation, alpha * h[i] + (1 - alpha) * drive);
        break;
      case CellKind::srn:
        out[i] = act(p.activation, rowdot(p.W, i, h) + drive);
        break;
      case CellKind::lstm: {
        auto pre = [&](std::size_t g) {
          return rowdot(p.W, g * H + i, h) + rowdot(p.U, g * H + i, x) + p.b[g * H + i];
        };
        const double ig = sig(pre(0)), fg = sig(pre(1)), cand = std::tanh(pre(2)), og = sig(pre(3));
        cout[i] = fg * c[i] + ig * cand;
        out[i] = og * std::tanh(cout[i]);
        break;
      }
      case CellKind::gru: {
        auto in = [&](std::size_t g) { return rowdot(p.U, g * H + i, x) + p.b[g * H + i]; };
        auto rec = [&](std::size_t g) { return rowdot(p.W, g * H + i, h); };
        const double r = sig(in(0) + rec(0)), z = sig(in(1) + rec(1));
        const double n = std::tanh(in(2) + r * rec(2));
        out[i] = (1 - z) * n + z * h[i];
        break;
      }
    }
  }
  return {out, cout};
}

Tensor random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
  Tensor t({n});
  for (double& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

CellParameters fixed_two_unit(CellKind kind) {
  CellParameters p = init_parameters(kind, 2, 1, 1);
  if (has_recurrent_matrix(kind)) p.W = Tensor::matrix(2, 2, {0.1, -0.2, 0.3, 0.4});
  p.U = Tensor::matrix(2, 1, {0.5, -0.6});
  p.b = Tensor::vector({0.05, -0.05});
  if (has_decay(kind)) p.alpha_logit = Tensor::scalar(logit(0.8));
  return p;
}

void check_close(const Tensor& a, const Vec& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(std::fabs(a[i] - b[i]) <= tol);
}

}  // namespace

TEST_CASE("inhibitory count rounding") {
  CHECK(inhibitory_count(5) == 1);
  CHECK(inhibitory_count(50) == 10);
  CHECK(inhibitory_count(3) == 1);
  CHECK(inhibitory_count(2) == 1);
  CHECK(inhibitory_count(650) == 130);
}

TEST_CASE("init_parameters") {
  const CellParameters a = init_parameters(CellKind::drnn, 50, 50, 9);
  const CellParameters b = init_parameters(CellKind::drnn, 50, 50, 9);
  CHECK(a.W == b.W);
  CHECK(a.U == b.U);
  CHECK(a.dale_signs == b.dale_signs);
  CHECK(std::count(a.dale_signs.begin(), a.dale_signs.end(), -1.0) == 10);
  for (std::size_t i = 40; i < 50; ++i) CHECK(a.dale_signs[i] == -1.0);
  CHECK(a.alpha_logit.item() == doctest::Approx(1.3862944).epsilon(1e-7));
  CHECK(a.alpha() == doctest::Approx(0.8).epsilon(1e-15));
  for (double v : a.b.values()) CHECK(v == 0.0);
  const double bound = 1.0 / std::sqrt(50.0);
  for (double v : a.W.values()) CHECK(std::fabs(v) <= bound);

  const CellParameters three = init_parameters(CellKind::drnn, 3, 2, 1);
  CHECK(three.dale_signs == std::vector<double>{1.0, 1.0, -1.0});

  CHECK(init_parameters(CellKind::abdrnn, 4, 2, 1).W.empty());
  CHECK(init_parameters(CellKind::lstm, 4, 2, 1).W.shape() == std::vector<std::size_t>{16, 4});
  CHECK(init_parameters(CellKind::gru, 4, 2, 1).U.shape() == std::vector<std::size_t>{12, 2});
  CHECK(init_parameters(CellKind::srn, 4, 2, 1).alpha_logit.empty());

  InitOptions shuffled;
  shuffled.inhibitory_shuffle_seed = 77;
  const CellParameters s = init_parameters(CellKind::drnn, 20, 3, 1, shuffled);
  CHECK(std::count(s.dale_signs.begin(), s.dale_signs.end(), -1.0) == 4);
}

TEST_CASE("effective recurrent matrix") {
  CellParameters p = init_parameters(CellKind::drnn, 4, 2, 3);
  for (double& v : p.W.values()) v = -std::fabs(v) - 0.01;
  CHECK(effective_recurrent_matrix(p) == Tensor::zeros({4, 4}));

  CHECK(init_parameters(CellKind::drnn, 5, 1, 1).dale_signs ==
        std::vector<double>{1, 1, 1, 1, -1});

  const CellParameters q = init_parameters(CellKind::drnn, 4, 2, 1234);
  const Tensor eff = effective_recurrent_matrix(q);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      const double w = q.W.at(i, j);
      if (j < 3) {
        CHECK(eff.at(i, j) >= 0.0);
      } else {
        CHECK(eff.at(i, j) <= 0.0);
      }
      CHECK(std::fabs(eff.at(i, j)) == (w > 0 ? w : 0.0));
    }
  }
}

TEST_CASE("hand-evaluated two-unit steps") {
  const CellState h0{Tensor::vector({0.2, -0.1}), {}};
  const Tensor x = Tensor::vector({1.0});
  // Values from an independent numpy evaluation.
  check_close(drnn_step(fixed_two_unit(CellKind::drnn), h0, x).h,
              {0.2673429027275476, -0.1877462058682854}, 1e-14);
  check_close(sdrnn_step(fixed_two_unit(CellKind::sdrnn), h0, x).h,
              {0.2710530265286208, -0.20313468846754054}, 1e-14);
  check_close(abdrnn_step(fixed_two_unit(CellKind::abdrnn), h0, x).h,
              {0.26362483547220333, -0.20696649972945258}, 1e-14);
  check_close(srn_step(fixed_two_unit(CellKind::srn), h0, x).h,
              {0.5298956075275294, -0.5580522155596244}, 1e-14);
}

TEST_CASE("zero-weight fixed points") {
  for (CellKind k : {CellKind::drnn, CellKind::sdrnn, CellKind::abdrnn, CellKind::srn}) {
    CellParameters p = init_parameters(k, 3, 2, 1);
    if (!p.W.empty()) p.W.fill(0.0);
    p.U.fill(0.0);
    const CellState s = step(p, initial_state(p), Tensor::vector({0.3, -0.2}));
    CHECK(s.h == Tensor::zeros({3}));
  }

  CellParameters lstm = init_parameters(CellKind::lstm, 2, 1, 1);
  lstm.W.fill(0.0);
  lstm.U.fill(0.0);
  const CellState prev{Tensor::vector({0.4, -0.3}), Tensor::vector({1.0, -2.0})};
  const CellState next = lstm_step(lstm, prev, Tensor::vector({0.7}));
  check_close(next.c_mem, {0.5, -1.0}, 1e-15);
  check_close(next.h, {0.5 * std::tanh(0.5), 0.5 * std::tanh(-1.0)}, 1e-15);

  CellParameters gru = init_parameters(CellKind::gru, 3, 2, 1);
  gru.W.fill(0.0);
  gru.U.fill(0.0);
  CHECK(gru_step(gru, initial_state(gru), Tensor::vector({1.0, 2.0})).h == Tensor::zeros({3}));
}

TEST_CASE("srn with identity input weights") {
  CellParameters p = init_parameters(CellKind::srn, 1, 1, 1);
  p.W.fill(0.0);
  p.U = Tensor::matrix(1, 1, {1.0});
  CHECK(srn_step(p, initial_state(p), Tensor::vector({0.5})).h[0] == std::tanh(0.5));
}

TEST_CASE("every cell matches the scalar oracle on fixed-seed configs") {
  Rng rng(99);
  for (CellKind kind : kAllCellKinds) {
    for (int trial = 0; trial < 10; ++trial) {
      InitOptions init;
      init.activation = trial % 2 ? Activation::relu : Activation::tanh;
      const std::size_t H = 2 + rng.index(5), I = 1 + rng.index(3);
      CellParameters p = init_parameters(kind, H, I, 100 + trial, init);
      for (double& v : p.b.values()) v = rng.uniform(-0.3, 0.3);
      CellState s = initial_state(p);
      s.h = random_vec(rng, H);
      if (kind == CellKind::lstm) s.c_mem = random_vec(rng, H);
      Vec h(s.h.values().begin(), s.h.values().end());
      Vec c = kind == CellKind::lstm ? Vec(s.c_mem.values().begin(), s.c_mem.values().end()) : Vec{};
      for (int t = 0; t < 4; ++t) {
        const Tensor x = random_vec(rng, I);
        s = step(p, s, x);
        auto [oh, oc] = oracle_step(kind, p, h, c, Vec(x.values().begin(), x.values().end()));
        h = oh;
        c = oc;
        check_close(s.h, h, 1e-13);
        if (kind == CellKind::lstm) check_close(s.c_mem, c, 1e-13);
      }
    }
  }
}

TEST_CASE("reduction chain") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t H = 2 + rng.index(7), I = 1 + rng.index(4);
    InitOptions init;
    init.activation = trial % 2 ? Activation::relu : Activation::tanh;
    init.alpha_init = rng.uniform(0.05, 0.95);
    CellParameters p = init_parameters(CellKind::drnn, H, I, rng.next(), init);
    for (double& v : p.b.values()) v = rng.uniform(-0.5, 0.5);
    const CellState h{random_vec(rng, H), {}};
    const Tensor x = random_vec(rng, I);

    CellParameters nonneg = p;
    for (double& v : nonneg.W.values()) v = std::fabs(v);
    std::fill(nonneg.dale_signs.begin(), nonneg.dale_signs.end(), 1.0);
    const Tensor a = drnn_step(nonneg, h, x).h;
    const Tensor b = sdrnn_step(nonneg, h, x).h;
    for (std::size_t i = 0; i < H; ++i) CHECK(std::fabs(a[i] - b[i]) <= 1e-12);

    CellParameters zero_w = p;
    zero_w.W.fill(0.0);
    const Tensor c = sdrnn_step(zero_w, h, x).h;
    const Tensor d = abdrnn_step(zero_w, h, x).h;
    for (std::size_t i = 0; i < H; ++i) CHECK(std::fabs(c[i] - d[i]) <= 1e-12);

    CellParameters no_decay = p;
    no_decay.alpha_logit = Tensor::scalar(-40.0);
    const Tensor e = sdrnn_step(no_decay, h, x).h;
    const Tensor f = srn_step(no_decay, h, x).h;
    for (std::size_t i = 0; i < H; ++i) CHECK(std::fabs(e[i] - f[i]) <= 1e-12);
  }
}

TEST_CASE("exponential moving average law") {
  for (CellKind kind : {CellKind::drnn, CellKind::sdrnn, CellKind::abdrnn}) {
    CellParameters p = init_parameters(kind, 3, 2, 5, {.activation = Activation::identity});
    if (!p.W.empty()) p.W.fill(0.0);
    p.U.fill(0.0);
    p.b = Tensor::vector({0.7, -0.3, 1.5});  // constant drive c-bar
    const double alpha = p.alpha();
    CellState s{Tensor::vector({-1.0, 0.4, 0.2}), {}};
    const Tensor h0 = s.h;
    const Tensor x = Tensor::vector({0.9, -0.9});
    for (int t = 1; t <= 50; ++t) {
      s = step(p, s, x);
      for (std::size_t i = 0; i < 3; ++i) {
        const double expected = std::pow(alpha, t) * std::fabs(h0[i] - p.b[i]);
        CHECK(std::fabs(std::fabs(s.h[i] - p.b[i]) - expected) <= 1e-12);
      }
    }
  }

  // Ab-DRNN pure decay
  CellParameters q = init_parameters(CellKind::abdrnn, 2, 1, 5, {.activation = Activation::identity});
  CellState s{Tensor::vector({1.0, -2.0}), {}};
  for (int t = 1; t <= 20; ++t) {
    s = abdrnn_step(q, s, Tensor::vector({0.0}));
    CHECK(std::fabs(s.h[0] - std::pow(0.8, t)) <= 1e-12);
    CHECK(std::fabs(s.h[1] + 2.0 * std::pow(0.8, t)) <= 1e-12);
  }
}

TEST_CASE("dale signs survive arbitrary updates to W") {
  Rng rng(42);
  CellParameters p = init_parameters(CellKind::drnn, 10, 3, 1);
  for (int update = 0; update < 1000; ++update) {
    for (double& v : p.W.values()) v += rng.uniform(-0.05, 0.05);
    const Tensor eff = effective_recurrent_matrix(p);
    for (std::size_t i = 0; i < 10; ++i) {
      for (std::size_t j = 0; j < 10; ++j) {
        if (p.dale_signs[j] > 0) {
          REQUIRE(eff.at(i, j) >= 0.0);
        } else {
          REQUIRE(eff.at(i, j) <= 0.0);
        }
      }
    }
  }
}

TEST_CASE("alpha stays in (0, 1) under updates to its logit") {
  Rng rng(8);
  CellParameters p = init_parameters(CellKind::sdrnn, 3, 2, 1);
  for (int update = 0; update < 5000; ++update) {
    p.alpha_logit[0] += rng.uniform(-0.05, 0.05);
    const double a = p.alpha();
    REQUIRE(a > 0.0);
    REQUIRE(a < 1.0);
  }
}

TEST_CASE("tanh cells keep states inside (-1, 1)") {
  Rng rng(12);
  for (CellKind kind : kAllCellKinds) {
    CellParameters p = init_parameters(kind, 6, 3, rng.next());
    for (double& v : p.U.values()) v *= 3.0;
    if (!p.W.empty()) {
      for (double& v : p.W.values()) v *= 3.0;
    }
    CellState s = initial_state(p);
    for (int t = 0; t < 30; ++t) {
      s = step(p, s, random_vec(rng, 3, 2.0));
      for (double v : s.h.values()) {
        CHECK(v > -1.0);
        CHECK(v < 1.0);
      }
    }
  }
}

TEST_CASE("dimension mismatches are rejected") {
  const CellParameters p = init_parameters(CellKind::drnn, 3, 2, 1);
  CHECK_THROWS_AS(drnn_step(p, initial_state(p), Tensor::vector({1.0})), ShapeError);
  CHECK_THROWS_AS(drnn_step(p, CellState{Tensor::vector({1.0}), {}}, Tensor::vector({1.0, 2.0})),
                  ShapeError);
}

TEST_CASE("cell checkpoint round trip is bit-exact") {
  Rng rng(31);
  for (CellKind kind : kAllCellKinds) {
    InitOptions init;
    init.inhibitory_shuffle_seed = rng.next();
    init.alpha_param = kind == CellKind::abdrnn ? AlphaParam::linear : AlphaParam::sigmoid;
    const CellParameters p = init_parameters(kind, 2 + rng.index(6), 1 + rng.index(3), rng.next(), init);
    Checkpoint ckpt;
    ckpt.set("seed", "5");
    append_cell(ckpt, "layer0.", p);
    std::stringstream buf;
    write_checkpoint(buf, ckpt);
    const std::string bytes = buf.str();
    CHECK(bytes.substr(0, 8) == "DRNNCKPT");

    std::stringstream in(bytes);
    const Checkpoint back = read_checkpoint(in);
    const CellParameters q = extract_cell(back, "layer0.");
    CHECK(q.kind == p.kind);
    CHECK(q.W == p.W);
    CHECK(q.U == p.U);
    CHECK(q.b == p.b);
    CHECK(q.alpha_logit == p.alpha_logit);
    CHECK(q.dale_signs == p.dale_signs);
    CHECK(q.alpha_param == p.alpha_param);

    std::stringstream again;
    write_checkpoint(again, back);
    CHECK(again.str() == bytes);
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  std::stringstream bad("NOTACKPT\x01\x00\x00\x00");
  CHECK_THROWS_AS(read_checkpoint(bad), CheckpointError);

  Checkpoint ckpt;
  append_cell(ckpt, "", init_parameters(CellKind::srn, 2, 1, 1));
  std::stringstream buf;
  write_checkpoint(buf, ckpt);
  std::string bytes = buf.str();
  bytes.pop_back();
  std::stringstream truncated(bytes);
  CHECK_THROWS_AS(read_checkpoint(truncated), CheckpointError);
}

TEST_CASE("gradient check passes for every cell and catches a sign flip") {
  GradcheckOptions opts;
  opts.configs = 5;
  for (CellKind kind : kAllCellKinds) {
    const CellGradcheckResult r = gradcheck_cell(kind, opts);
    INFO(to_string(kind), " max rel err ", r.max_relative_error);
    CHECK(r.passed);
    CHECK(r.configs_checked == 5);
  }
  opts.inject_sign_flip = true;
  CHECK_FALSE(gradcheck_cell(CellKind::drnn, opts).passed);
}
