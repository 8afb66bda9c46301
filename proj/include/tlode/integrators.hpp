#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tlode/dynamics.hpp"
#include "tlode/midpoint.hpp"
#include "tlode/ops.hpp"
#include "tlode/taylor_jets.hpp"

namespace tlode {

enum class Scheme { TaylorLagrange, TruncatedTaylor, Euler, Rk4, HyperEuler, Dopri5 };

std::string scheme_name(Scheme s);
Scheme scheme_from_name(const std::string& name);

struct IntegratorConfig {
  Scheme scheme = Scheme::TaylorLagrange;
  int order = 1;  // series order p for TaylorLagrange / TruncatedTaylor
  int steps = 1;  // H for fixed-step schemes
  double rtol = 1.4e-12;
  double atol = 1.4e-12;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Tensor> states;
  std::uint64_t field_evals = 0;

  const Tensor& final_state() const { return states.back(); }
};

// Optional companions a scheme consumes: TaylorLagrange needs the midpoint
// model; HyperEuler needs the residual net g(x, dt).
struct IntegrateAux {
  const MidpointModel* midpoint = nullptr;
  const Mlp* residual = nullptr;
};

// One order-p step: x + sum_{l=1..p-1} dt^l u[l](x) + dt^p u[p](Gamma),
// with Gamma from the midpoint model. Costs one midpoint evaluation plus
// series passes at x and at Gamma (at most 2p field passes).
Tensor tl_step(const VectorField& f, const MidpointModel& mid, const Tensor& x, double dt, int p,
               std::uint64_t* nfe = nullptr);

Trajectory integrate(const VectorField& f, const IntegrateAux& aux, const Tensor& x0, double t0,
                     double t_end, const IntegratorConfig& cfg);

Trajectory dopri5_adaptive(const VectorField& f, const Tensor& x0, double t0, double t_end,
                           double rtol, double atol);

// ---- step kernels over Ops (shared by inference and training) ----

namespace step_detail {

// Multiplies row r of v by dts[r]^l (single scalar fast path when uniform).
template <class Ops>
typename Ops::V scale_rows_dt_pow(Ops& ops, typename Ops::V v, const std::vector<double>& dts,
                                  int l) {
  bool uniform = true;
  for (double d : dts) uniform = uniform && d == dts[0];
  auto powl = [l](double d) {
    double r = 1.0;
    for (int i = 0; i < l; ++i) r *= d;
    return r;
  };
  if (uniform) return ops.scale(v, powl(dts[0]));
  std::vector<double> col(dts.size());
  for (std::size_t i = 0; i < dts.size(); ++i) col[i] = powl(dts[i]);
  return ops.mul_colvec(v, ops.constant(Tensor::vec(std::move(col))));
}

}  // namespace step_detail

template <class Ops>
typename Ops::V tl_step_ops(Ops& ops, const VectorField& f,
                            std::span<const typename Ops::V> field_params,
                            const MidpointModel& mid,
                            std::span<const typename Ops::V> mid_params, typename Ops::V x,
                            const std::vector<double>& dts, int p, std::uint64_t* nfe = nullptr,
                            typename Ops::V* remainder_out = nullptr,
                            JetCostCounter* counter = nullptr) {
  if (p < 1) throw ConfigError("tl_step: order must be >= 1");
  const int kx = std::max(p - 1, 1);
  auto cx = ode_taylor_coefficients_ops(ops, f, field_params, x, kx, counter);
  if (nfe) *nfe += static_cast<std::uint64_t>(kx);
  auto gamma = midpoint_apply(ops, mid, mid_params, x, cx[1], dts);
  auto cg = ode_taylor_coefficients_ops(ops, f, field_params, gamma, p, counter);
  if (nfe) *nfe += static_cast<std::uint64_t>(p);
  typename Ops::V out = x;
  for (int l = 1; l <= p - 1; ++l)
    out = ops.add(out, step_detail::scale_rows_dt_pow(ops, cx[static_cast<std::size_t>(l)], dts, l));
  auto rem = step_detail::scale_rows_dt_pow(ops, cg[static_cast<std::size_t>(p)], dts, p);
  if (remainder_out) *remainder_out = rem;
  return ops.add(out, rem);
}

template <class Ops>
typename Ops::V euler_step_ops(Ops& ops, const VectorField& f,
                               std::span<const typename Ops::V> field_params, typename Ops::V x,
                               const std::vector<double>& dts, std::uint64_t* nfe = nullptr) {
  auto fx = field_apply(ops, f, field_params, x);
  if (nfe) *nfe += 1;
  return ops.add(x, step_detail::scale_rows_dt_pow(ops, fx, dts, 1));
}

template <class Ops>
typename Ops::V rk4_step_ops(Ops& ops, const VectorField& f,
                             std::span<const typename Ops::V> field_params, typename Ops::V x,
                             const std::vector<double>& dts, std::uint64_t* nfe = nullptr) {
  auto half = [&](typename Ops::V v) { return step_detail::scale_rows_dt_pow(ops, v, dts, 1); };
  auto k1 = field_apply(ops, f, field_params, x);
  auto k2 = field_apply(ops, f, field_params, ops.add(x, ops.scale(half(k1), 0.5)));
  auto k3 = field_apply(ops, f, field_params, ops.add(x, ops.scale(half(k2), 0.5)));
  auto k4 = field_apply(ops, f, field_params, ops.add(x, half(k3)));
  if (nfe) *nfe += 4;
  auto sum = ops.add(ops.add(k1, k4), ops.scale(ops.add(k2, k3), 2.0));
  return ops.add(x, ops.scale(half(sum), 1.0 / 6.0));
}

// x + dt f(x) + dt^2 g(x, dt): explicit Euler plus a learned second-order
// residual correction.
template <class Ops>
typename Ops::V hypereuler_step_ops(Ops& ops, const VectorField& f,
                                    std::span<const typename Ops::V> field_params,
                                    const Mlp& residual,
                                    std::span<const typename Ops::V> residual_params,
                                    typename Ops::V x, const std::vector<double>& dts,
                                    std::uint64_t* nfe = nullptr) {
  auto fx = field_apply(ops, f, field_params, x);
  if (nfe) *nfe += 1;
  const bool batched = ops.val(x).rank() == 2;
  Tensor dtcol = batched ? Tensor({dts.size(), 1}, std::vector<double>(dts))
                         : Tensor::vec(std::vector<double>(dts));
  auto features = ops.concat_cols(x, ops.constant(std::move(dtcol)));
  auto g = mlp_apply(ops, residual, residual_params, features);
  auto out = ops.add(x, step_detail::scale_rows_dt_pow(ops, fx, dts, 1));
  return ops.add(out, step_detail::scale_rows_dt_pow(ops, g, dts, 2));
}

// ---- adaptive embedded 5(4) pair over Ops ----

template <class Ops>
struct AdaptiveResult {
  typename Ops::V final_state;
  std::vector<double> times;
  std::vector<typename Ops::V> states;
  std::uint64_t field_evals = 0;
};

// Single-trajectory adaptive integration (state [n] or [1 x n]); step-size
// control reads concrete values and is not differentiated, matching a
// discretize-then-optimize treatment of the accepted step sequence.
template <class Ops>
AdaptiveResult<Ops> dopri5_ops(Ops& ops, const VectorField& f,
                               std::span<const typename Ops::V> field_params, typename Ops::V x0,
                               double t0, double t_end, double rtol, double atol) {
  if (!(t_end > t0)) throw ConfigError("dopri5: end time must exceed start time");
  // Dormand-Prince 5(4) tableau.
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 35.0 / 384 - 5179.0 / 57600, e3 = 500.0 / 1113 - 7571.0 / 16695,
                          e4 = 125.0 / 192 - 393.0 / 640, e5 = -2187.0 / 6784 + 92097.0 / 339200,
                          e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;

  AdaptiveResult<Ops> out;
  const double span = t_end - t0;
  const double h_floor = 1e-14 * span;
  auto eval = [&](typename Ops::V y) {
    ++out.field_evals;
    return field_apply(ops, f, field_params, y);
  };
  auto err_norm = [&](const Tensor& e, const Tensor& y, const Tensor& ynew) {
    double acc = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
      const double sc = atol + rtol * std::max(std::fabs(y.data[i]), std::fabs(ynew.data[i]));
      const double q = e.data[i] / sc;
      acc += q * q;
    }
    return std::sqrt(acc / static_cast<double>(e.size()));
  };

  typename Ops::V x = x0;
  double t = t0;
  out.times.push_back(t);
  out.states.push_back(x);

  // Two-evaluation starting-step heuristic.
  auto k1 = eval(x);
  double h;
  {
    const Tensor& xv = ops.val(x);
    const Tensor& fv = ops.val(k1);
    double d0 = 0.0, d1 = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double sc = atol + rtol * std::fabs(xv.data[i]);
      d0 += (xv.data[i] / sc) * (xv.data[i] / sc);
      d1 += (fv.data[i] / sc) * (fv.data[i] / sc);
    }
    d0 = std::sqrt(d0 / static_cast<double>(xv.size()));
    d1 = std::sqrt(d1 / static_cast<double>(xv.size()));
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, span);
    auto x1 = ops.add(x, ops.scale(k1, h0));
    auto f1 = eval(x1);
    double d2 = 0.0;
    const Tensor& f1v = ops.val(f1);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double sc = atol + rtol * std::fabs(xv.data[i]);
      const double q = (f1v.data[i] - fv.data[i]) / sc;
      d2 += q * q;
    }
    d2 = std::sqrt(d2 / static_cast<double>(xv.size())) / h0;
    const double dm = std::max(d1, d2);
    double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
    h = std::min({100.0 * h0, h1, span});
  }

  constexpr double kSafety = 0.9, kMinFactor = 0.2, kMaxFactor = 10.0;
  constexpr double kAlpha = 0.7 / 5.0, kBeta = 0.4 / 5.0;
  double facold = 1e-4;
  while (t < t_end) {
    bool last = false;
    if (t + h >= t_end) {
      h = t_end - t;
      last = true;
    }
    if (h < h_floor)
      throw NumericalError(
          "dopri5: step size underflow (h < 1e-14 * span) — the problem is too stiff for this "
          "explicit method at the requested tolerance");
    auto st = [&](double c, typename Ops::V v) { return ops.add(x, ops.scale(v, c * h)); };
    auto k2 = eval(st(a21, k1));
    auto k3 = eval(ops.add(x, ops.add(ops.scale(k1, a31 * h), ops.scale(k2, a32 * h))));
    auto k4 = eval(ops.add(
        x, ops.add(ops.add(ops.scale(k1, a41 * h), ops.scale(k2, a42 * h)), ops.scale(k3, a43 * h))));
    auto k5 = eval(ops.add(
        x, ops.add(ops.add(ops.scale(k1, a51 * h), ops.scale(k2, a52 * h)),
                   ops.add(ops.scale(k3, a53 * h), ops.scale(k4, a54 * h)))));
    auto k6 = eval(ops.add(
        x, ops.add(ops.add(ops.scale(k1, a61 * h), ops.scale(k2, a62 * h)),
                   ops.add(ops.add(ops.scale(k3, a63 * h), ops.scale(k4, a64 * h)),
                           ops.scale(k5, a65 * h)))));
    auto ynew = ops.add(
        x, ops.add(ops.add(ops.scale(k1, b1 * h), ops.scale(k3, b3 * h)),
                   ops.add(ops.add(ops.scale(k4, b4 * h), ops.scale(k5, b5 * h)),
                           ops.scale(k6, b6 * h))));
    auto k7 = eval(ynew);
    Tensor errv = ops.val(ops.add(
        ops.add(ops.add(ops.scale(k1, e1 * h), ops.scale(k3, e3 * h)),
                ops.add(ops.scale(k4, e4 * h), ops.scale(k5, e5 * h))),
        ops.add(ops.scale(k6, e6 * h), ops.scale(k7, e7 * h))));
    const double err = err_norm(errv, ops.val(x), ops.val(ynew));
    if (err <= 1.0) {
      t = last ? t_end : t + h;
      x = ynew;
      k1 = k7;  // first-same-as-last
      out.times.push_back(t);
      out.states.push_back(x);
      const double fo = std::max(err, 1e-4);
      double factor = kSafety * std::pow(err > 0 ? err : 1e-16, -kAlpha) * std::pow(facold, kBeta);
      facold = fo;
      h *= std::clamp(factor, kMinFactor, kMaxFactor);
    } else {
      double factor = kSafety * std::pow(err, -kAlpha) * std::pow(facold, kBeta);
      h *= std::clamp(factor, kMinFactor, 1.0);
    }
  }
  out.final_state = x;
  return out;
}

}  // namespace tlode
