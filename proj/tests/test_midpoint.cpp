#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "tlode/dynamics.hpp"
#include "tlode/error.hpp"
#include "tlode/midpoint.hpp"
#include "tlode/rng.hpp"

using namespace tlode;

namespace {

double rel_err(const Tensor& got, const Tensor& want) {
  const double denom = norm2(want);
  const double err = norm2(sub(got, want));
  return denom > 0 ? err / denom : err;
}

// Net with zero weights and a fixed bias on the last layer: predicts a
// constant gain regardless of the features.
Mlp constant_net(std::size_t in, std::size_t out, const std::vector<double>& bias) {
  Rng rng(0);
  Mlp net = Mlp::make({in, out}, {Activation::None}, rng, /*zero_last_layer=*/true);
  net.params[1] = Tensor::vec(bias);
  return net;
}

}  // namespace

TEST_CASE("scalar analytic gain matches the closed form") {
  const Tensor a = Tensor::matrix(1, 1, {-1.0});
  const AnalyticGain g = analytic_linear_gain(a, 0.1);
  // (e^{-dt} - 1 + dt) / dt for a = -1
  const double want = (std::exp(-0.1) - 1.0 + 0.1) / 0.1;
  CHECK(g.gain.data[0] == doctest::Approx(want).epsilon(1e-13));
  CHECK(g.gain.data[0] == doctest::Approx(0.0483742).epsilon(1e-5));
  CHECK(g.tail_bound == 0.0);
}

TEST_CASE("zero dynamics degenerate to the trapezoidal gain dt/2") {
  const Tensor a = Tensor::zeros({2, 2});
  const AnalyticGain g = analytic_linear_gain(a, 0.3);
  CHECK(g.gain.data[0] == doctest::Approx(0.15).epsilon(1e-14));
  CHECK(g.gain.data[1] == 0.0);
  CHECK(g.gain.data[2] == 0.0);
  CHECK(g.gain.data[3] == doctest::Approx(0.15).epsilon(1e-14));
}

TEST_CASE("singular nonzero matrices are redirected to the series form") {
  const Tensor a = Tensor::matrix(2, 2, {0.0, 1.0, 0.0, 0.0});  // nilpotent, singular
  CHECK_THROWS_WITH_AS(analytic_linear_gain(a, 0.1), doctest::Contains("series"),
                       NumericalError);
  const AnalyticGain g = analytic_linear_gain(a, 0.1, 30);
  // series terminates for nilpotent A: G = dt/2 I + dt^2/6 A
  CHECK(g.gain.data[0] == doctest::Approx(0.05).epsilon(1e-13));
  CHECK(g.gain.data[1] == doctest::Approx(0.1 * 0.1 / 6.0).epsilon(1e-13));
  CHECK(g.tail_bound >= 0.0);
}

TEST_CASE("series gain converges to the closed form with a shrinking tail") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = Tensor::zeros({2, 2});
    for (auto& v : a.data) v = rng.uniform(-2.0, 2.0);
    const double dt = rng.uniform(0.01, 0.4);
    AnalyticGain closed;
    try {
      closed = analytic_linear_gain(a, dt);
    } catch (const NumericalError&) {
      continue;  // singular draw
    }
    const AnalyticGain k8 = analytic_linear_gain(a, dt, 8);
    const AnalyticGain k40 = analytic_linear_gain(a, dt, 40);
    CHECK(k40.tail_bound <= k8.tail_bound);
    // the closed form applies A^{-2}, so agreement is capped by its conditioning
    CHECK(rel_err(k40.gain, closed.gain) <= 1e-10);
    // the reported tail really bounds the truncation error
    CHECK(frobenius_norm(sub(k8.gain, closed.gain)) <= k8.tail_bound + 1e-12);
  }
}

TEST_CASE("analytic midpoint makes one first-order step exact") {
  const LinearField f = make_stiff_system();
  Rng rng(37);
  for (double dt : {1e-3, 0.05, 0.3}) {
    const Tensor x = Tensor::vec(rng.uniform_vec(2, -0.5, 0.5));
    const MidpointModel m = analytic_linear_midpoint(f.a_matrix);
    const MidpointPrediction pred = predict_midpoint(m, f, x, dt);
    // x + dt f(Gamma) must equal the exact flow
    const Tensor step = add(x, scale(field_eval(f, pred.midpoint), dt));
    const Tensor want = exact_linear_solution(f.a_matrix, x, dt);
    CHECK(rel_err(step, want) <= 1e-12);
  }
}

TEST_CASE("degenerate midpoint returns the base state") {
  const LinearField f = make_stiff_system();
  const Tensor x = Tensor::vec({0.2, -0.4});
  const MidpointPrediction pred = predict_midpoint(degenerate_midpoint(), f, x, 0.1);
  CHECK(rel_err(pred.midpoint, x) == 0.0);
  CHECK(norm2(pred.gain) == 0.0);
}

TEST_CASE("full gain with a diagonal matrix equals the diag gain") {
  const LinearField f = make_stiff_system();
  const Tensor x = Tensor::vec({0.3, 0.7});
  const std::vector<double> diag = {0.04, 0.002};
  const std::vector<double> full = {0.04, 0.0, 0.0, 0.002};  // row-major with zero off-diagonals

  const MidpointModel md = learned_midpoint(constant_net(3, 2, diag), GainShape::Diag);
  const MidpointModel mf = learned_midpoint(constant_net(3, 4, full), GainShape::Full);
  const MidpointPrediction pd = predict_midpoint(md, f, x, 0.05);
  const MidpointPrediction pf = predict_midpoint(mf, f, x, 0.05);
  CHECK(rel_err(pd.midpoint, pf.midpoint) <= 1e-15);
  // and the midpoint actually moved off x
  CHECK(norm2(sub(pd.midpoint, x)) > 0.0);
}

TEST_CASE("learned midpoint consumes the step size as a feature") {
  // Identity first layer wiring the dt column straight through: gain = dt for
  // every component, so Gamma = x + dt f(x).
  Mlp net = constant_net(3, 2, {0.0, 0.0});
  net.params[0] = Tensor::matrix(2, 3, {0.0, 0.0, 1.0, 0.0, 0.0, 1.0});
  const MidpointModel m = learned_midpoint(std::move(net), GainShape::Diag);
  const LinearField f = make_stiff_system();
  const Tensor x = Tensor::vec({0.5, 0.5});
  for (double dt : {0.01, 0.2}) {
    const MidpointPrediction pred = predict_midpoint(m, f, x, dt);
    const Tensor want = add(x, scale(field_eval(f, x), dt));
    CHECK(rel_err(pred.midpoint, want) <= 1e-15);
  }
}

TEST_CASE("perturbed midpoint shifts the base prediction linearly") {
  const LinearField f = make_stiff_system();
  const Tensor x = Tensor::vec({0.1, -0.2});
  const Tensor dir = Tensor::vec({1.0, -2.0});
  MidpointModel base = analytic_linear_midpoint(f.a_matrix);
  const Tensor gamma0 = predict_midpoint(base, f, x, 0.1).midpoint;
  for (double eta : {1e-6, 1e-3, 0.1}) {
    const MidpointModel pm = perturbed_midpoint(analytic_linear_midpoint(f.a_matrix), dir, eta);
    const Tensor gamma = predict_midpoint(pm, f, x, 0.1).midpoint;
    CHECK(rel_err(gamma, add(gamma0, scale(dir, eta))) <= 1e-14);
  }
}

TEST_CASE("batched midpoint evaluation matches per-state evaluation") {
  Rng rng(41);
  Mlp net = Mlp::make({3, 8, 4}, {Activation::Tanh, Activation::None}, rng);
  const MidpointModel m = learned_midpoint(std::move(net), GainShape::Full);
  const LinearField f = make_stiff_system();

  const std::size_t b = 5;
  Tensor xb = Tensor::zeros({b, 2});
  Tensor fb = Tensor::zeros({b, 2});
  std::vector<double> dts;
  std::vector<Tensor> singles;
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor x = Tensor::vec(rng.uniform_vec(2, -0.5, 0.5));
    const double dt = rng.uniform(0.01, 0.3);
    dts.push_back(dt);
    const Tensor fx = field_eval(f, x);
    for (std::size_t j = 0; j < 2; ++j) {
      xb.data[i * 2 + j] = x.data[j];
      fb.data[i * 2 + j] = fx.data[j];
    }
    singles.push_back(predict_midpoint(m, f, x, dt).midpoint);
  }
  EagerOps ops;
  const Tensor batched = midpoint_apply(ops, m, {}, xb, fb, dts);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(batched.data[i * 2 + j] == doctest::Approx(singles[i].data[j]).epsilon(1e-14));
}

TEST_CASE("midpoint validation names the offending dimensions") {
  Rng rng(43);
  // wrong input arity (needs n+1 features)
  Mlp bad_in = Mlp::make({2, 4, 2}, {Activation::Tanh, Activation::None}, rng);
  CHECK_THROWS_AS(validate_midpoint(learned_midpoint(std::move(bad_in), GainShape::Diag), 2),
                  ConfigError);
  // wrong output arity for the declared shape
  Mlp bad_out = Mlp::make({3, 4, 3}, {Activation::Tanh, Activation::None}, rng);
  CHECK_THROWS_AS(validate_midpoint(learned_midpoint(std::move(bad_out), GainShape::Full), 2),
                  ConfigError);
  // analytic model must match the state dimension
  CHECK_THROWS_AS(validate_midpoint(analytic_linear_midpoint(Tensor::identity(3)), 2),
                  ConfigError);
  // a well-formed model passes
  Mlp good = Mlp::make({3, 4, 4}, {Activation::Tanh, Activation::None}, rng);
  CHECK_NOTHROW(validate_midpoint(learned_midpoint(std::move(good), GainShape::Full), 2));
}

TEST_CASE("gain shape names round-trip") {
  CHECK(gain_shape_from_name(gain_shape_name(GainShape::Full)) == GainShape::Full);
  CHECK(gain_shape_from_name(gain_shape_name(GainShape::Diag)) == GainShape::Diag);
  CHECK_THROWS_AS(gain_shape_from_name("banded"), ConfigError);
}

TEST_CASE("remainder magnitude scales like dt^p") {
  const LinearField f = make_stiff_system({-1.0, -4.0});
  const Tensor x = Tensor::vec({0.4, 0.4});
  const MidpointModel m = degenerate_midpoint();
  for (int p = 1; p <= 3; ++p) {
    const double r1 = norm2(remainder_estimate(f, m, x, 0.01, p));
    const double r2 = norm2(remainder_estimate(f, m, x, 0.02, p));
    CHECK(std::log2(r2 / r1) == doctest::Approx(p).epsilon(0.02));
  }
}
