#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "tlode/error.hpp"
#include "tlode/ops.hpp"
#include "tlode/optim.hpp"
#include "tlode/rng.hpp"
#include "tlode/tape.hpp"
#include "tlode/tensor.hpp"

using namespace tlode;

TEST_CASE("tensor construction validates shape against data size") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), ShapeError);
  Tensor t = Tensor::matrix(2, 2, {1, 2, 3, 4});
  CHECK(t.at(1, 0) == 3.0);
  CHECK(t.rows() == 2);
  Tensor v = Tensor::vec({1, 2, 3});
  CHECK(v.rank() == 1);
  CHECK(v.rows() == 1);  // rank-1 acts as a single row
  CHECK(v.cols() == 3);
}

TEST_CASE("matmul_nt multiplies by the transposed weight") {
  // x [2 x 3], w [2 x 3] -> x w^T [2 x 2]
  Tensor x = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor w = Tensor::matrix(2, 3, {1, 0, 1, 0, 1, 0});
  Tensor y = matmul_nt(x, w);
  CHECK(y.at(0, 0) == 4.0);
  CHECK(y.at(0, 1) == 2.0);
  CHECK(y.at(1, 0) == 10.0);
  CHECK(y.at(1, 1) == 5.0);
  // rank-1 x stays rank-1
  Tensor y1 = matmul_nt(Tensor::vec({1, 2, 3}), w);
  CHECK(y1.rank() == 1);
  CHECK(y1.at(0) == 4.0);
  CHECK_THROWS_AS(matmul_nt(x, Tensor::matrix(2, 2, {1, 0, 0, 1})), ShapeError);
}

TEST_CASE("row/column helpers") {
  Tensor x = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor b = add_rowvec(x, Tensor::vec({10, 20}));
  CHECK(b.at(1, 0) == 13.0);
  Tensor s = mul_colvec(x, Tensor::vec({2, 3}));
  CHECK(s.at(0, 1) == 4.0);
  CHECK(s.at(1, 0) == 9.0);
  Tensor c = concat_cols(x, Tensor::matrix(2, 1, {7, 8}));
  CHECK(c.cols() == 3);
  CHECK(c.at(1, 2) == 8.0);
  Tensor sl = slice_cols(c, 1, 3);
  CHECK(sl.at(0, 0) == 2.0);
  CHECK(sl.at(1, 1) == 8.0);
}

TEST_CASE("batched_matvec applies a per-row matrix") {
  // row 0 holds [[1,2],[3,4]], row 1 holds [[0,1],[1,0]]
  Tensor g = Tensor::matrix(2, 4, {1, 2, 3, 4, 0, 1, 1, 0});
  Tensor v = Tensor::matrix(2, 2, {1, 1, 5, 6});
  Tensor y = batched_matvec(g, v, 2, 2);
  CHECK(y.at(0, 0) == 3.0);
  CHECK(y.at(0, 1) == 7.0);
  CHECK(y.at(1, 0) == 6.0);
  CHECK(y.at(1, 1) == 5.0);
}

TEST_CASE("inverse of a 2x2 and the singular error") {
  Tensor a = Tensor::matrix(2, 2, {4, 7, 2, 6});
  Tensor inv = inverse(a);
  CHECK(inv.at(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(inv.at(0, 1) == doctest::Approx(-0.7).epsilon(1e-12));
  Tensor id = matmul(a, inv);
  CHECK(id.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(id.at(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_WITH_AS(inverse(Tensor::matrix(2, 2, {1, 2, 2, 4})),
                       doctest::Contains("singular"), NumericalError);
}

TEST_CASE("softplus is stable at extreme arguments") {
  Tensor big = map_softplus(Tensor::vec({1000.0}));
  CHECK(big.at(0) == doctest::Approx(1000.0));
  Tensor small = map_softplus(Tensor::vec({-1000.0}));
  CHECK(small.at(0) == 0.0);
  CHECK(all_finite(big));
}

TEST_CASE("rng streams are reproducible and splittable") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42);
  for (int i = 0; i < 1000; ++i) {
    double u = c.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  Rng d(42);
  Rng child = d.split();
  CHECK(child.next_u64() != d.next_u64());
  Rng e(7);
  for (int i = 0; i < 1000; ++i) CHECK(e.index(13) < 13);
  // loose moment check on the normal sampler
  Rng g(1);
  double mean = 0, m2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double z = g.normal();
    mean += z;
    m2 += z * z;
  }
  mean /= n;
  m2 /= n;
  CHECK(std::fabs(mean) < 0.03);
  CHECK(std::fabs(m2 - 1.0) < 0.05);
}

// One computation over every op the tape records, written once over the Ops
// policy so the tape gradient can be checked against eager finite differences.
template <class Ops>
typename Ops::V graph_all_ops(Ops& ops, const std::vector<typename Ops::V>& ps,
                              typename Ops::V x) {
  using V = typename Ops::V;
  const V& w = ps[0];     // [3 x 4]
  const V& bias = ps[1];  // [3]
  const V& col = ps[2];   // [2] per-row scale
  const V& gm = ps[3];    // [2 x 4] batched 2x2 matrices
  V h = ops.add_rowvec(ops.matmul_nt(x, w), bias);           // [2 x 3]
  V s = ops.sum(ops.mul(ops.tanh(h), ops.sigmoid(h)));
  s = ops.add(s, ops.sum(ops.softplus(ops.scale(h, 0.5))));
  s = ops.add(s, ops.sum(ops.exp(ops.scale(h, 0.1))));
  s = ops.add(s, ops.sum(ops.mul(ops.sin(h), ops.cos(h))));
  s = ops.add(s, ops.sum(ops.relu(h)));
  s = ops.sub(s, ops.sum(ops.mul_colvec(x, col)));
  V two = ops.concat_cols(ops.slice_cols(x, 0, 1), ops.slice_cols(x, 2, 3));  // [2 x 2]
  s = ops.add(s, ops.sum(ops.batched_matvec(gm, two, 2, 2)));
  return s;
}

static std::vector<Tensor> graph_params() {
  return {
      Tensor::matrix(3, 4, {0.31, -0.62, 0.41, 0.22, -0.17, 0.55, -0.43, 0.12, 0.61, 0.25, -0.33,
                            -0.51}),
      Tensor::vec({0.21, -0.34, 0.55}),
      Tensor::vec({0.8, -1.2}),
      Tensor::matrix(2, 4, {0.5, -0.25, 0.75, 1.5, -0.6, 0.3, 0.2, -0.4}),
  };
}

TEST_CASE("tape gradients match central finite differences on every op") {
  Tensor x = Tensor::matrix(2, 4, {0.4, -0.3, 0.9, 0.1, -0.7, 0.6, 0.2, -0.5});
  std::vector<Tensor> pv = graph_params();

  Tape tape;
  TapeOps ops{&tape};
  std::vector<Var> ps;
  for (std::size_t i = 0; i < pv.size(); ++i) ps.push_back(tape.param(pv[i], "p" + std::to_string(i)));
  Var xin = tape.leaf(x);
  Var out = graph_all_ops(ops, ps, xin);
  tape.mark_output(out);
  tape.backward(out);
  std::vector<Tensor> grads = tape.param_grads();
  REQUIRE(grads.size() == pv.size());

  EagerOps eager;
  auto eval = [&](const std::vector<Tensor>& vals) {
    return graph_all_ops(eager, vals, x).at(0);
  };
  for (std::size_t i = 0; i < pv.size(); ++i) {
    for (std::size_t j = 0; j < pv[i].size(); ++j) {
      const double h = 1e-6 * (1.0 + std::fabs(pv[i].data[j]));
      std::vector<Tensor> up = pv, dn = pv;
      up[i].data[j] += h;
      dn[i].data[j] -= h;
      const double fd = (eval(up) - eval(dn)) / (2 * h);
      const double g = grads[i].data[j];
      const double rel = std::fabs(g - fd) / std::max(1.0, std::fabs(fd));
      INFO("param ", i, " entry ", j, " tape ", g, " fd ", fd);
      CHECK(rel <= 1e-4);
    }
  }
}

TEST_CASE("forward replay is bit-exact and validates inputs") {
  Tensor x = Tensor::matrix(2, 4, {0.4, -0.3, 0.9, 0.1, -0.7, 0.6, 0.2, -0.5});
  std::vector<Tensor> pv = graph_params();

  Tape tape;
  TapeOps ops{&tape};
  std::vector<Var> ps;
  for (auto& p : pv) ps.push_back(tape.param(p, "p"));
  Var xin = tape.leaf(x);
  Var out = graph_all_ops(ops, ps, xin);
  tape.mark_output(out);
  const double recorded = tape.value(out).at(0);

  Tensor x2 = Tensor::matrix(2, 4, {0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8});
  std::vector<Tensor> r1 = tape.forward({x2});
  std::vector<Tensor> r2 = tape.forward({x2});
  REQUIRE(r1.size() == 1);
  CHECK(r1[0].data == r2[0].data);  // identical bits
  EagerOps eager;
  CHECK(r1[0].at(0) == graph_all_ops(eager, pv, x2).at(0));
  // replay with the original input restores the original value exactly
  CHECK(tape.forward({x})[0].at(0) == recorded);
  CHECK_THROWS_AS(tape.forward({x2, x2}), ShapeError);
  CHECK_THROWS_AS(tape.forward({Tensor::vec({1.0})}), ShapeError);
}

TEST_CASE("backward before forward on an unset placeholder is an error") {
  Tape tape;
  Var x = tape.placeholder({2});
  Var w = tape.param(Tensor::vec({1.0, 2.0}), "w");
  Var y = tape.sum(tape.mul(x, w));
  tape.mark_output(y);
  CHECK_THROWS_WITH_AS(tape.backward(y), doctest::Contains("before forward()"), NumericalError);
  tape.forward({Tensor::vec({3.0, 4.0})});
  tape.backward(y);
  Tensor g = tape.param_grads()[0];
  CHECK(g.at(0) == 3.0);
  CHECK(g.at(1) == 4.0);
}

TEST_CASE("backward requires a scalar objective unless a cotangent is given") {
  Tape tape;
  Var x = tape.param(Tensor::vec({1.0, 2.0}), "x");
  Var y = tape.scale(x, 3.0);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
  tape.backward(y, Tensor::vec({1.0, 0.0}));
  CHECK(tape.param_grads()[0].at(0) == 3.0);
  CHECK(tape.param_grads()[0].at(1) == 0.0);
}

TEST_CASE("adam effective learning rate decays exponentially") {
  CHECK(adam_effective_lr(1e-3, 0.0, 500) == 1e-3);
  CHECK(adam_effective_lr(1e-3, 1e-4, 1000) ==
        doctest::Approx(1e-3 * std::exp(-0.1)).epsilon(1e-15));
}

TEST_CASE("adam first step matches the closed form") {
  // with zero state: m1=(1-b1)g, v1=(1-b2)g^2, bias-corrected mhat=g,
  // vhat=g^2, so the update is lr * g / (|g| + eps)
  std::vector<Tensor> params = {Tensor::vec({1.0, -2.0})};
  std::vector<Tensor> grads = {Tensor::vec({0.5, -0.25})};
  AdamState st;
  AdamConfig cfg;
  cfg.lr0 = 1e-2;
  adam_step(params, grads, st, cfg);
  CHECK(st.t == 1);
  CHECK(params[0].at(0) ==
        doctest::Approx(1.0 - 1e-2 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(params[0].at(1) ==
        doctest::Approx(-2.0 + 1e-2 * 0.25 / (0.25 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam converges on a quadratic") {
  std::vector<Tensor> params = {Tensor::vec({5.0, -3.0})};
  AdamState st;
  AdamConfig cfg;
  cfg.lr0 = 0.1;
  for (int i = 0; i < 2000; ++i) {
    std::vector<Tensor> grads = {scale(params[0], 2.0)};  // d/dx of x^2
    adam_step(params, grads, st, cfg);
  }
  CHECK(norm2(params[0]) < 1e-6);
}

TEST_CASE("a non-finite gradient rejects the whole step and names the parameter") {
  std::vector<Tensor> params = {Tensor::vec({1.0}), Tensor::vec({2.0})};
  std::vector<Tensor> grads = {Tensor::vec({0.5}),
                               Tensor::vec({std::numeric_limits<double>::quiet_NaN()})};
  AdamState st;
  AdamConfig cfg;
  CHECK_THROWS_WITH_AS(adam_step(params, grads, st, cfg, {"weights.0", "bias.1"}),
                       doctest::Contains("bias.1"), NumericalError);
  CHECK(params[0].at(0) == 1.0);  // first parameter untouched: atomic rejection
  CHECK(params[1].at(0) == 2.0);
  CHECK(st.t == 0);
}
