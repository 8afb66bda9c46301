#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "tlode/nn.hpp"
#include "tlode/ops.hpp"
#include "tlode/rng.hpp"
#include "tlode/tensor.hpp"

namespace tlode {

// f(x) = A x.
struct LinearField {
  Tensor a_matrix;  // [n x n]
};

// Frictionless pendulum in (angle, angular velocity) coordinates:
// f(x) = [x2, -(g/l) sin x1].
struct PendulumField {
  double g_over_l = 1.0;
};

// f(x) = B (x ⊙ x) + C x + d. Polynomial test dynamics; exercises the
// product rule in series propagation.
struct QuadraticField {
  Tensor b_matrix, c_matrix;  // [n x n]
  Tensor d;                   // [n]
};

// f(x) = net(x) with square input/output. Activations must be smooth so the
// field can be pushed through Taylor series of any order.
struct MlpField {
  Mlp net;
};

using VectorField = std::variant<LinearField, PendulumField, QuadraticField, MlpField>;

std::size_t state_dim(const VectorField& f);
// Validates dimensions and (for MlpField) the smooth-activation whitelist.
void validate_field(const VectorField& f);
// Convenience factory that validates.
VectorField make_mlp_field(Mlp net);

// Parameter handles for the MlpField net when recorded on a tape; empty for
// analytic fields or when constants suffice.
template <class Ops>
typename Ops::V field_apply(Ops& ops, const VectorField& f,
                            std::span<const typename Ops::V> mlp_params, typename Ops::V x) {
  if (const auto* lin = std::get_if<LinearField>(&f)) {
    return ops.matmul_nt(x, ops.constant(lin->a_matrix));
  }
  if (const auto* pen = std::get_if<PendulumField>(&f)) {
    auto angle = ops.slice_cols(x, 0, 1);
    auto vel = ops.slice_cols(x, 1, 2);
    auto acc = ops.scale(ops.sin(angle), -pen->g_over_l);
    return ops.concat_cols(vel, acc);
  }
  if (const auto* q = std::get_if<QuadraticField>(&f)) {
    auto sq = ops.mul(x, x);
    auto out = ops.add(ops.matmul_nt(sq, ops.constant(q->b_matrix)),
                       ops.matmul_nt(x, ops.constant(q->c_matrix)));
    return ops.add_rowvec(out, ops.constant(q->d));
  }
  const auto& m = std::get<MlpField>(f);
  return mlp_apply(ops, m.net, mlp_params, x);
}

Tensor field_eval(const VectorField& f, const Tensor& x);

// ---- linear-system reference solution ----

// Matrix exponential by scaling-and-squaring plus a Taylor series summed to
// absolute tolerance ~1e-14 on the scaled matrix.
Tensor expm(const Tensor& a);
// expm(A t) x0.
Tensor exact_linear_solution(const Tensor& a, const Tensor& x0, double t);

// Eigenvalues of a 2x2 matrix (real pair expected; throws on complex pair).
std::pair<double, double> eigenvalues_2x2(const Tensor& a);

// ---- stiff benchmark system ----

struct StiffSystemConfig {
  double lambda_slow = -1.0;
  double lambda_fast = -1000.0;
  bool rotated = false;   // similarity-transform by a rotation, keeping the spectrum
  double angle = 0.3;     // radians, used when rotated
};

// Linear system with spectrum {lambda_slow, lambda_fast}; diagonal by
// default, optionally conjugated by a rotation.
LinearField make_stiff_system(const StiffSystemConfig& cfg = {});

// ---- Lipschitz structure ----

struct LipschitzEstimate {
  Tensor component_bounds;  // L_k: per-component Lipschitz bound
  double l2 = 0.0;          // ||L||_2 of the component vector
};

// Componentwise Lipschitz bounds on a box [lo, hi]^n. Exact row-norm bound
// for linear fields; max over sampled pairs of |f_k(x)-f_k(y)| / ||x-y||_2
// otherwise.
LipschitzEstimate lipschitz_estimate(const VectorField& f, const Tensor& lo, const Tensor& hi,
                                     std::size_t samples, Rng& rng);

}  // namespace tlode
