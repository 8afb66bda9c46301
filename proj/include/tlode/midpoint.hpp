#pragma once

#include <memory>
#include <span>
#include <variant>

#include "tlode/dynamics.hpp"
#include "tlode/nn.hpp"
#include "tlode/ops.hpp"
#include "tlode/tensor.hpp"

namespace tlode {

// The remainder slot of an order-p step evaluates f's p-th solution
// coefficient at an intermediate state Gamma = x + G(x, dt) f(x), where G is
// the "gain": a per-state matrix (Full) or componentwise vector (Diag)
// multiplying f(x).
enum class GainShape { Full, Diag };

std::string gain_shape_name(GainShape s);
GainShape gain_shape_from_name(const std::string& name);

// Gamma = x. Turns the scheme into a plain truncated Taylor step.
struct DegenerateMidpoint {};

// Exact gain for linear dynamics f = A x at first order:
//   G(dt) = sum_{i>=1} dt^i / (i+1)! A^{i-1},
// closed form A^{-2} (e^{A dt} - I - A dt) / dt when A is invertible. With
// this gain a single first-order step reproduces e^{A dt} x exactly.
struct AnalyticLinearMidpoint {
  Tensor a_matrix;
  int series_terms = 0;  // 0 = closed form; K > 0 = truncated series
};

// Gain predicted by a net from features (x, dt).
struct LearnedMidpoint {
  Mlp net;  // input n+1, output n*n (Full) or n (Diag)
  GainShape shape = GainShape::Full;
};

struct MidpointModel;

// Wraps another model and offsets its midpoint by eta * direction. Used to
// probe how one-step error responds to midpoint error.
struct PerturbedMidpoint {
  std::shared_ptr<const MidpointModel> base;
  Tensor direction;  // [n]
  double eta = 0.0;
};

struct MidpointModel {
  std::variant<DegenerateMidpoint, AnalyticLinearMidpoint, LearnedMidpoint, PerturbedMidpoint> v;
};

MidpointModel degenerate_midpoint();
MidpointModel analytic_linear_midpoint(Tensor a_matrix, int series_terms = 0);
MidpointModel learned_midpoint(Mlp net, GainShape shape);
MidpointModel perturbed_midpoint(MidpointModel base, Tensor direction, double eta);

// Dimension checks against state dimension n; throws ConfigError.
void validate_midpoint(const MidpointModel& m, std::size_t n);
// Number of trainable tensors (nonzero only for LearnedMidpoint).
const Mlp* midpoint_net(const MidpointModel& m);
Mlp* midpoint_net(MidpointModel& m);

struct AnalyticGain {
  Tensor gain;             // [n x n]
  double tail_bound = 0.0; // series truncation bound (0 for closed form)
};

// terms = 0: closed form (throws NumericalError for singular nonzero A,
// directing to the series); A = 0 degenerates to dt/2 I. terms = K > 0:
// truncated series with a reported tail bound.
AnalyticGain analytic_linear_gain(const Tensor& a, double dt, int terms = 0);

struct MidpointPrediction {
  Tensor midpoint;
  Tensor gain;  // [n x n] (Full) or [n] (Diag); zeros for degenerate
  GainShape gain_shape = GainShape::Diag;
};

// Single-state prediction, evaluating f(x) internally.
MidpointPrediction predict_midpoint(const MidpointModel& m, const VectorField& f, const Tensor& x,
                                    double dt);

// dt^p * (p-th solution coefficient at Gamma): the magnitude of the slot the
// midpoint controls.
Tensor remainder_estimate(const VectorField& f, const MidpointModel& m, const Tensor& x, double dt,
                          int p);

namespace midpoint_detail {

// Gain rows for the analytic model: row b is the row-major n x n gain at
// dt[b]. Computed eagerly (never differentiated).
Tensor analytic_gain_rows(const AnalyticLinearMidpoint& m, const std::vector<double>& dts,
                          bool batched);

}  // namespace midpoint_detail

// Gamma for a batch. `x`/`fx` are [B x n] (or [n]); `dts` has one entry per
// row. `net_params` are tape handles for the learned net (empty = lift
// constants).
template <class Ops>
typename Ops::V midpoint_apply(Ops& ops, const MidpointModel& m,
                               std::span<const typename Ops::V> net_params, typename Ops::V x,
                               typename Ops::V fx, const std::vector<double>& dts) {
  const Tensor& xv = ops.val(x);
  const std::size_t n = xv.cols();
  const bool batched = xv.rank() == 2;
  if (std::get_if<DegenerateMidpoint>(&m.v)) return x;
  if (const auto* an = std::get_if<AnalyticLinearMidpoint>(&m.v)) {
    auto rows = ops.constant(midpoint_detail::analytic_gain_rows(*an, dts, batched));
    return ops.add(x, ops.batched_matvec(rows, fx, n, n));
  }
  if (const auto* le = std::get_if<LearnedMidpoint>(&m.v)) {
    Tensor dtcol = batched ? Tensor({dts.size(), 1}, std::vector<double>(dts))
                           : Tensor::vec(std::vector<double>(dts));
    auto features = ops.concat_cols(x, ops.constant(std::move(dtcol)));
    auto gain = mlp_apply(ops, le->net, net_params, features);
    if (le->shape == GainShape::Diag) return ops.add(x, ops.mul(gain, fx));
    return ops.add(x, ops.batched_matvec(gain, fx, n, n));
  }
  const auto& pe = std::get<PerturbedMidpoint>(m.v);
  auto base = midpoint_apply(ops, *pe.base, net_params, x, fx, dts);
  return ops.add_rowvec(base, ops.constant(scale(pe.direction, pe.eta)));
}

}  // namespace tlode
