#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "tlode/dynamics.hpp"
#include "tlode/error.hpp"
#include "tlode/rng.hpp"

using namespace tlode;

namespace {

double rel_err(const Tensor& got, const Tensor& want) {
  const double denom = norm2(want);
  const double err = norm2(sub(got, want));
  return denom > 0 ? err / denom : err;
}

}  // namespace

TEST_CASE("matrix exponential: diagonal closed form") {
  const Tensor a = Tensor::matrix(2, 2, {-1.0, 0.0, 0.0, -1000.0});
  const Tensor e = expm(scale(a, 0.05));
  CHECK(e.data[0] == doctest::Approx(std::exp(-0.05)).epsilon(1e-14));
  CHECK(e.data[1] == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(e.data[2] == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(e.data[3] == doctest::Approx(std::exp(-50.0)).epsilon(1e-12));
}

TEST_CASE("matrix exponential: nilpotent block integrates exactly") {
  // A = [[0,1],[0,0]] gives expm(A t) = [[1,t],[0,1]]; from x0 = (0,1) the
  // flow is (t, 1).
  const Tensor a = Tensor::matrix(2, 2, {0.0, 1.0, 0.0, 0.0});
  const Tensor x = exact_linear_solution(a, Tensor::vec({0.0, 1.0}), 2.0);
  CHECK(x.data[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(x.data[1] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("matrix exponential: semigroup property on random matrices") {
  Rng rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 1 + rng.index(4);
    Tensor a = Tensor::zeros({n, n});
    for (auto& v : a.data) v = rng.uniform(-1.5, 1.5);
    const Tensor whole = expm(scale(a, 0.7));
    const Tensor halves = matmul(expm(scale(a, 0.3)), expm(scale(a, 0.4)));
    CHECK(rel_err(halves, whole) <= 1e-12);
  }
}

TEST_CASE("exact linear solution matches the scalar exponential") {
  const Tensor a = Tensor::matrix(1, 1, {-2.5});
  const Tensor x = exact_linear_solution(a, Tensor::vec({3.0}), 0.8);
  CHECK(x.data[0] == doctest::Approx(3.0 * std::exp(-2.0)).epsilon(1e-14));
}

TEST_CASE("stiff benchmark: spectrum and rotation invariance") {
  const LinearField diag = make_stiff_system();
  auto [l1, l2] = eigenvalues_2x2(diag.a_matrix);
  CHECK(std::min(l1, l2) == doctest::Approx(-1000.0));
  CHECK(std::max(l1, l2) == doctest::Approx(-1.0));

  StiffSystemConfig rc;
  rc.rotated = true;
  const LinearField rot = make_stiff_system(rc);
  auto [r1, r2] = eigenvalues_2x2(rot.a_matrix);
  CHECK(std::min(r1, r2) == doctest::Approx(-1000.0).epsilon(1e-10));
  CHECK(std::max(r1, r2) == doctest::Approx(-1.0).epsilon(1e-10));
  CHECK(rot.a_matrix.data[1] != 0.0);  // genuinely non-diagonal
}

TEST_CASE("eigenvalue helper rejects complex pairs") {
  const Tensor rotation = Tensor::matrix(2, 2, {0.0, -1.0, 1.0, 0.0});
  CHECK_THROWS_AS(eigenvalues_2x2(rotation), NumericalError);
}

TEST_CASE("field evaluation: every analytic field type") {
  const Tensor x = Tensor::vec({0.5, -0.25});

  const Tensor lin = field_eval(make_stiff_system(), x);
  CHECK(lin.data[0] == doctest::Approx(-0.5));
  CHECK(lin.data[1] == doctest::Approx(250.0));

  const Tensor pen = field_eval(PendulumField{2.0}, x);
  CHECK(pen.data[0] == doctest::Approx(-0.25));
  CHECK(pen.data[1] == doctest::Approx(-2.0 * std::sin(0.5)));

  const QuadraticField q{Tensor::matrix(2, 2, {1.0, 0.0, 0.0, 2.0}),
                         Tensor::matrix(2, 2, {0.0, 1.0, -1.0, 0.0}), Tensor::vec({0.1, 0.2})};
  const Tensor qv = field_eval(q, x);
  // B (x⊙x) + C x + d with x⊙x = (0.25, 0.0625)
  CHECK(qv.data[0] == doctest::Approx(0.25 + (-0.25) + 0.1));
  CHECK(qv.data[1] == doctest::Approx(2.0 * 0.0625 + (-0.5) + 0.2));
}

TEST_CASE("field evaluation: mlp field matches manual forward pass") {
  Rng rng(11);
  Mlp net = Mlp::make({2, 3, 2}, {Activation::Tanh, Activation::None}, rng);
  const Tensor x = Tensor::vec({0.3, -0.6});
  const Tensor got = field_eval(make_mlp_field(net), x);
  const Tensor want = mlp_eval(net, x);
  CHECK(rel_err(got, want) == 0.0);
}

TEST_CASE("field validation catches bad shapes and non-smooth activations") {
  Rng rng(13);
  // Non-square nets cannot be dynamics.
  Mlp rect = Mlp::make({2, 4, 3}, {Activation::Tanh, Activation::None}, rng);
  CHECK_THROWS_AS(validate_field(MlpField{std::move(rect)}), ConfigError);
  // Relu cannot be pushed through solution series.
  Mlp kinked = Mlp::make({2, 4, 2}, {Activation::Relu, Activation::None}, rng);
  CHECK_THROWS_AS(validate_field(MlpField{std::move(kinked)}), ConfigError);
  // Mismatched linear/quadratic blocks.
  CHECK_THROWS_AS(validate_field(LinearField{Tensor::matrix(2, 3, {1, 0, 0, 0, 1, 0})}),
                  ConfigError);
  CHECK_THROWS_AS(validate_field(QuadraticField{Tensor::zeros({2, 2}), Tensor::zeros({2, 2}),
                                                Tensor::vec({1.0, 2.0, 3.0})}),
                  ConfigError);
}

TEST_CASE("componentwise Lipschitz bounds: exact rows for linear fields") {
  const LinearField f = make_stiff_system();
  Rng rng(17);
  const auto est = lipschitz_estimate(f, Tensor::full({2}, -1.0), Tensor::full({2}, 1.0), 64, rng);
  CHECK(est.component_bounds.data[0] == doctest::Approx(1.0));
  CHECK(est.component_bounds.data[1] == doctest::Approx(1000.0));
  CHECK(est.l2 == doctest::Approx(std::sqrt(1.0 + 1000.0 * 1000.0)));
}

TEST_CASE("componentwise Lipschitz bounds: sampled estimate brackets the pendulum") {
  const PendulumField f{1.0};
  Rng rng(23);
  const auto est =
      lipschitz_estimate(f, Tensor::full({2}, -1.0), Tensor::full({2}, 1.0), 4096, rng);
  // Row 1 is x2 (slope 1); row 2 is -sin x1 (slope <= 1, close to 1 near 0).
  CHECK(est.component_bounds.data[0] == doctest::Approx(1.0).epsilon(0.05));
  CHECK(est.component_bounds.data[1] <= 1.0 + 1e-9);
  CHECK(est.component_bounds.data[1] >= 0.8);
  CHECK(est.l2 <= std::sqrt(2.0) + 1e-9);
}

TEST_CASE("state dimension reporting") {
  CHECK(state_dim(make_stiff_system()) == 2);
  CHECK(state_dim(PendulumField{}) == 2);
  Rng rng(29);
  CHECK(state_dim(make_mlp_field(Mlp::make({3, 5, 3}, {Activation::Tanh, Activation::None}, rng))) ==
        3);
}
