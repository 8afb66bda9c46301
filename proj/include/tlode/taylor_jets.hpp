#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tlode/dynamics.hpp"
#include "tlode/error.hpp"
#include "tlode/ops.hpp"

namespace tlode {

// Instrumentation for the cost contract: every primitive applied to a
// truncated series of length m adds m. Total work for coefficients up to
// order p is then O(p^2) per field primitive.
struct JetCostCounter {
  std::uint64_t primitive_passes = 0;
};

namespace jets_detail {

template <class Ops>
using Coeffs = std::vector<typename Ops::V>;

inline void bump(JetCostCounter* c, std::size_t len) {
  if (c) c->primitive_passes += len;
}

// (u * w)_k = sum_{a=0..k} u_a ⊙ w_{k-a}, truncated to the input length.
template <class Ops>
Coeffs<Ops> series_product(Ops& ops, const Coeffs<Ops>& u, const Coeffs<Ops>& w,
                           JetCostCounter* counter) {
  const std::size_t len = u.size();
  bump(counter, len);
  Coeffs<Ops> out;
  out.reserve(len);
  for (std::size_t k = 0; k < len; ++k) {
    typename Ops::V acc = ops.mul(u[0], w[k]);
    for (std::size_t a = 1; a <= k; ++a) acc = ops.add(acc, ops.mul(u[a], w[k - a]));
    out.push_back(acc);
  }
  return out;
}

// v = g(u) for an elementwise map whose derivative is expressible as a
// series d (v' = d ⊙ u' componentwise in the expansion variable):
//   k v_k = sum_{j=1..k} j u_j ⊙ d_{k-j}.
// `derivative(k)` must return d_k and may depend on v_0..v_k already filled.
template <class Ops, class Head, class DerivAt>
Coeffs<Ops> chain_rule_series(Ops& ops, const Coeffs<Ops>& u, Head head, DerivAt derivative,
                              JetCostCounter* counter) {
  const std::size_t len = u.size();
  bump(counter, len);
  Coeffs<Ops> v;
  v.reserve(len);
  v.push_back(head());
  std::vector<typename Ops::V> d;  // derivative series coefficients, built on demand
  for (std::size_t k = 1; k < len; ++k) {
    while (d.size() < k) d.push_back(derivative(v, d.size()));
    typename Ops::V acc = ops.scale(ops.mul(u[1], d[k - 1]), 1.0 / static_cast<double>(k));
    for (std::size_t j = 2; j <= k; ++j)
      acc = ops.add(acc, ops.scale(ops.mul(u[j], d[k - j]),
                                   static_cast<double>(j) / static_cast<double>(k)));
    v.push_back(acc);
  }
  return v;
}

template <class Ops>
Coeffs<Ops> series_tanh(Ops& ops, const Coeffs<Ops>& u, JetCostCounter* counter) {
  // v' = (1 - v^2) u'. The derivative series is 1 - (v*v), built as v grows.
  std::vector<typename Ops::V> square;  // (v*v)_m
  auto head = [&]() { return ops.tanh(u[0]); };
  auto deriv = [&](const Coeffs<Ops>& v, std::size_t m) {
    typename Ops::V w = ops.mul(v[0], v[m]);
    for (std::size_t a = 1; a <= m; ++a) w = ops.add(w, ops.mul(v[a], v[m - a]));
    square.push_back(w);
    typename Ops::V neg = ops.scale(square[m], -1.0);
    if (m == 0) {
      // 1 - v0^2
      auto one = ops.constant(Tensor::full(ops.val(neg).shape, 1.0));
      return ops.add(one, neg);
    }
    return neg;
  };
  return chain_rule_series(ops, u, head, deriv, counter);
}

template <class Ops>
Coeffs<Ops> series_sigmoid(Ops& ops, const Coeffs<Ops>& u, JetCostCounter* counter) {
  // v' = (v - v^2) u'.
  auto head = [&]() { return ops.sigmoid(u[0]); };
  auto deriv = [&](const Coeffs<Ops>& v, std::size_t m) {
    typename Ops::V w = ops.mul(v[0], v[m]);
    for (std::size_t a = 1; a <= m; ++a) w = ops.add(w, ops.mul(v[a], v[m - a]));
    return ops.sub(v[m], w);
  };
  return chain_rule_series(ops, u, head, deriv, counter);
}

template <class Ops>
Coeffs<Ops> series_exp(Ops& ops, const Coeffs<Ops>& u, JetCostCounter* counter) {
  // v' = v u'.
  auto head = [&]() { return ops.exp(u[0]); };
  auto deriv = [&](const Coeffs<Ops>& v, std::size_t m) { return v[m]; };
  return chain_rule_series(ops, u, head, deriv, counter);
}

template <class Ops>
Coeffs<Ops> series_softplus(Ops& ops, const Coeffs<Ops>& u, JetCostCounter* counter) {
  // v' = sigmoid(u) u'; needs the sigmoid series of u alongside.
  Coeffs<Ops> sig = series_sigmoid(ops, u, counter);
  auto head = [&]() { return ops.softplus(u[0]); };
  auto deriv = [&](const Coeffs<Ops>&, std::size_t m) { return sig[m]; };
  return chain_rule_series(ops, u, head, deriv, counter);
}

// Joint sine/cosine series: s' = c u', c' = -s u'.
template <class Ops>
std::pair<Coeffs<Ops>, Coeffs<Ops>> series_sincos(Ops& ops, const Coeffs<Ops>& u,
                                                  JetCostCounter* counter) {
  const std::size_t len = u.size();
  bump(counter, len);
  Coeffs<Ops> s, c;
  s.push_back(ops.sin(u[0]));
  c.push_back(ops.cos(u[0]));
  for (std::size_t k = 1; k < len; ++k) {
    typename Ops::V sa = ops.scale(ops.mul(u[1], c[k - 1]), 1.0 / static_cast<double>(k));
    typename Ops::V ca = ops.scale(ops.mul(u[1], s[k - 1]), 1.0 / static_cast<double>(k));
    for (std::size_t j = 2; j <= k; ++j) {
      const double w = static_cast<double>(j) / static_cast<double>(k);
      sa = ops.add(sa, ops.scale(ops.mul(u[j], c[k - j]), w));
      ca = ops.add(ca, ops.scale(ops.mul(u[j], s[k - j]), w));
    }
    s.push_back(sa);
    c.push_back(ops.scale(ca, -1.0));
  }
  return {std::move(s), std::move(c)};
}

template <class Ops>
Coeffs<Ops> series_activation(Ops& ops, Activation act, const Coeffs<Ops>& u,
                              JetCostCounter* counter) {
  switch (act) {
    case Activation::None: return u;
    case Activation::Tanh: return series_tanh(ops, u, counter);
    case Activation::Sigmoid: return series_sigmoid(ops, u, counter);
    case Activation::Softplus: return series_softplus(ops, u, counter);
    case Activation::Exp: return series_exp(ops, u, counter);
    case Activation::Relu:
      if (u.size() == 1) {
        bump(counter, 1);
        return {ops.relu(u[0])};
      }
      throw NumericalError(
          "series_activation: primitive 'relu' is not smooth; Taylor coefficients of order >= 2 "
          "are undefined for this field");
  }
  throw ShapeError("series_activation: unknown activation");
}

// Linear map applied coefficientwise; constant shift enters order 0 only.
template <class Ops>
Coeffs<Ops> series_linear(Ops& ops, const Coeffs<Ops>& u, typename Ops::V w,
                          const typename Ops::V* bias, JetCostCounter* counter) {
  bump(counter, u.size());
  Coeffs<Ops> out;
  out.reserve(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) {
    typename Ops::V y = ops.matmul_nt(u[k], w);
    if (bias && k == 0) y = ops.add_rowvec(y, *bias);
    out.push_back(y);
  }
  return out;
}

}  // namespace jets_detail

// Pushes the truncated series u (solution coefficients of the state) through
// the field, returning the series of f(x(s)) to the same truncation order.
template <class Ops>
jets_detail::Coeffs<Ops> field_jet_apply(Ops& ops, const VectorField& f,
                                         std::span<const typename Ops::V> mlp_params,
                                         const jets_detail::Coeffs<Ops>& u,
                                         JetCostCounter* counter = nullptr) {
  using namespace jets_detail;
  if (const auto* lin = std::get_if<LinearField>(&f)) {
    auto a = ops.constant(lin->a_matrix);
    return series_linear(ops, u, a, nullptr, counter);
  }
  if (const auto* pen = std::get_if<PendulumField>(&f)) {
    Coeffs<Ops> angle, vel;
    for (const auto& c : u) {
      angle.push_back(ops.slice_cols(c, 0, 1));
      vel.push_back(ops.slice_cols(c, 1, 2));
    }
    auto [s, cjet] = series_sincos(ops, angle, counter);
    (void)cjet;
    Coeffs<Ops> out;
    for (std::size_t k = 0; k < u.size(); ++k)
      out.push_back(ops.concat_cols(vel[k], ops.scale(s[k], -pen->g_over_l)));
    return out;
  }
  if (const auto* q = std::get_if<QuadraticField>(&f)) {
    auto sq = series_product(ops, u, u, counter);
    auto b = ops.constant(q->b_matrix);
    auto c = ops.constant(q->c_matrix);
    auto d = ops.constant(q->d);
    auto by = series_linear(ops, sq, b, nullptr, counter);
    auto cy = series_linear(ops, u, c, &d, counter);
    Coeffs<Ops> out;
    for (std::size_t k = 0; k < u.size(); ++k) out.push_back(ops.add(by[k], cy[k]));
    return out;
  }
  const auto& m = std::get<MlpField>(f);
  std::vector<typename Ops::V> lifted;
  std::span<const typename Ops::V> params = mlp_params;
  if (params.empty()) {
    lifted.reserve(m.net.params.size());
    for (const auto& p : m.net.params) lifted.push_back(ops.constant(p));
    params = lifted;
  }
  Coeffs<Ops> h = u;
  for (std::size_t l = 0; l < m.net.layer_count(); ++l) {
    h = series_linear(ops, h, params[2 * l], &params[2 * l + 1], counter);
    h = series_activation(ops, m.net.acts[l], h, counter);
  }
  return h;
}

// Solution-series coefficients at x: returns u[0..order] with u[0] = x and
//   x(t + s) = sum_l u[l] s^l.
// Each u[l] is the scaled l-th time derivative of the flow (u[1] = f(x)).
// Built by `order` passes of the field over growing series; the instrumented
// primitive-pass count grows quadratically in `order`.
template <class Ops>
jets_detail::Coeffs<Ops> ode_taylor_coefficients_ops(Ops& ops, const VectorField& f,
                                                     std::span<const typename Ops::V> mlp_params,
                                                     typename Ops::V x, int order,
                                                     JetCostCounter* counter = nullptr) {
  if (order < 0) throw ConfigError("ode_taylor_coefficients: order must be >= 0");
  jets_detail::Coeffs<Ops> u;
  u.push_back(x);
  for (int k = 0; k < order; ++k) {
    auto v = field_jet_apply(ops, f, mlp_params, u, counter);
    u.push_back(ops.scale(v[static_cast<std::size_t>(k)], 1.0 / (k + 1)));
  }
  return u;
}

// Eager wrappers over single or batched states.
std::vector<Tensor> ode_taylor_coefficients(const VectorField& f, const Tensor& x, int order,
                                            JetCostCounter* counter = nullptr);

// x + sum_{l=1..p-1} dt^l u[l]: the series part of an order-p step, with the
// order-p slot left to the remainder term.
Tensor truncated_taylor_predict(const VectorField& f, const Tensor& x, double dt, int p);

// ---- independent oracle: nested first-order directional derivatives ----
//
// Computes the same coefficients through the recursion
//   u[1] = f,   u[l+1] = ((d u[l] / dx) f) / (l + 1)
// with every directional derivative taken by a fresh first-order forward
// pass (layered dual numbers). Shares no code with the series path above;
// cost grows exponentially with the order. Test oracle only.
std::vector<Tensor> nested_jvp_coefficients(const VectorField& f, const Tensor& x, int p,
                                            std::uint64_t* scalar_ops = nullptr);

constexpr int kMaxOracleOrder = 4;

}  // namespace tlode
