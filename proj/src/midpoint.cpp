#include "tlode/midpoint.hpp"

#include <cmath>

#include "tlode/error.hpp"
#include "tlode/taylor_jets.hpp"

namespace tlode {

std::string gain_shape_name(GainShape s) { return s == GainShape::Full ? "full" : "diag"; }

GainShape gain_shape_from_name(const std::string& name) {
  if (name == "full") return GainShape::Full;
  if (name == "diag") return GainShape::Diag;
  throw ConfigError("unknown gain shape '" + name + "' (expected 'full' or 'diag')");
}

MidpointModel degenerate_midpoint() { return MidpointModel{DegenerateMidpoint{}}; }

MidpointModel analytic_linear_midpoint(Tensor a_matrix, int series_terms) {
  return MidpointModel{AnalyticLinearMidpoint{std::move(a_matrix), series_terms}};
}

MidpointModel learned_midpoint(Mlp net, GainShape shape) {
  return MidpointModel{LearnedMidpoint{std::move(net), shape}};
}

MidpointModel perturbed_midpoint(MidpointModel base, Tensor direction, double eta) {
  PerturbedMidpoint p;
  p.base = std::make_shared<const MidpointModel>(std::move(base));
  p.direction = std::move(direction);
  p.eta = eta;
  return MidpointModel{std::move(p)};
}

void validate_midpoint(const MidpointModel& m, std::size_t n) {
  if (const auto* an = std::get_if<AnalyticLinearMidpoint>(&m.v)) {
    if (an->a_matrix.rank() != 2 || an->a_matrix.shape[0] != n || an->a_matrix.shape[1] != n)
      throw ConfigError("midpoint: analytic gain matrix must be " + std::to_string(n) + "x" +
                        std::to_string(n) + ", got " + an->a_matrix.shape_str());
    return;
  }
  if (const auto* le = std::get_if<LearnedMidpoint>(&m.v)) {
    if (le->net.input_dim() != n + 1)
      throw ConfigError("midpoint: net must take (state, dt) = " + std::to_string(n + 1) +
                        " inputs, got " + std::to_string(le->net.input_dim()));
    const std::size_t want = le->shape == GainShape::Full ? n * n : n;
    if (le->net.output_dim() != want)
      throw ConfigError("midpoint: net must emit " + std::to_string(want) + " gain entries for " +
                        gain_shape_name(le->shape) + " shape, got " +
                        std::to_string(le->net.output_dim()));
    return;
  }
  if (const auto* pe = std::get_if<PerturbedMidpoint>(&m.v)) {
    if (pe->direction.size() != n)
      throw ConfigError("midpoint: perturbation direction must have the state dimension");
    validate_midpoint(*pe->base, n);
  }
}

const Mlp* midpoint_net(const MidpointModel& m) {
  if (const auto* le = std::get_if<LearnedMidpoint>(&m.v)) return &le->net;
  return nullptr;
}

Mlp* midpoint_net(MidpointModel& m) {
  if (auto* le = std::get_if<LearnedMidpoint>(&m.v)) return &le->net;
  return nullptr;
}

AnalyticGain analytic_linear_gain(const Tensor& a, double dt, int terms) {
  if (a.rank() != 2 || a.shape[0] != a.shape[1])
    throw ShapeError("analytic_linear_gain: matrix must be square, got " + a.shape_str());
  if (dt <= 0.0) throw ConfigError("analytic_linear_gain: dt must be positive");
  const std::size_t n = a.shape[0];
  bool zero = true;
  for (double v : a.data) zero = zero && v == 0.0;
  AnalyticGain out;
  if (terms <= 0) {
    if (zero) {
      // Series collapses to its first term.
      out.gain = scale(Tensor::identity(n), dt / 2.0);
      return out;
    }
    Tensor ainv;
    try {
      ainv = inverse(a);
    } catch (const NumericalError&) {
      throw NumericalError(
          "analytic_linear_gain: matrix is singular; the closed form needs A^{-2} — "
          "request the truncated series instead (terms > 0)");
    }
    // A^{-2} (e^{A dt} - I - A dt) / dt
    Tensor tail = expm(scale(a, dt));
    tail = sub(tail, Tensor::identity(n));
    tail = sub(tail, scale(a, dt));
    out.gain = scale(matmul(matmul(ainv, ainv), tail), 1.0 / dt);
    return out;
  }
  // sum_{i=1..K} dt^i / (i+1)! A^{i-1}
  Tensor acc = Tensor::zeros({n, n});
  Tensor apow = Tensor::identity(n);  // A^{i-1}
  double dti = 1.0;                   // dt^i
  double fact = 1.0;                  // (i+1)!
  for (int i = 1; i <= terms; ++i) {
    dti *= dt;
    fact *= (i + 1);
    acc = add(acc, scale(apow, dti / fact));
    if (i < terms) apow = matmul(apow, a);
  }
  out.gain = acc;
  // Tail: sum_{i>K} dt^i ||A||^{i-1} / (i+1)! <= dt^{K+1} ||A||^K e^{dt ||A||} / (K+2)!
  const double na = std::max(frobenius_norm(a), 1e-300);
  double head = std::pow(dt, terms + 1) * std::pow(na, terms) * std::exp(dt * na);
  double factk2 = 1.0;
  for (int i = 2; i <= terms + 2; ++i) factk2 *= i;
  out.tail_bound = head / factk2;
  return out;
}

namespace midpoint_detail {

Tensor analytic_gain_rows(const AnalyticLinearMidpoint& m, const std::vector<double>& dts,
                          bool batched) {
  const std::size_t n = m.a_matrix.shape[0];
  if (!batched) {
    AnalyticGain g = analytic_linear_gain(m.a_matrix, dts.at(0), m.series_terms);
    return Tensor::vec(std::move(g.gain.data));
  }
  Tensor rows = Tensor::zeros({dts.size(), n * n});
  // Reuse one gain when every row shares the step size (the common case).
  bool uniform = true;
  for (double d : dts) uniform = uniform && d == dts[0];
  if (uniform) {
    AnalyticGain g = analytic_linear_gain(m.a_matrix, dts[0], m.series_terms);
    for (std::size_t r = 0; r < dts.size(); ++r)
      for (std::size_t k = 0; k < n * n; ++k) rows.data[r * n * n + k] = g.gain.data[k];
  } else {
    for (std::size_t r = 0; r < dts.size(); ++r) {
      AnalyticGain g = analytic_linear_gain(m.a_matrix, dts[r], m.series_terms);
      for (std::size_t k = 0; k < n * n; ++k) rows.data[r * n * n + k] = g.gain.data[k];
    }
  }
  return rows;
}

}  // namespace midpoint_detail

MidpointPrediction predict_midpoint(const MidpointModel& m, const VectorField& f, const Tensor& x,
                                    double dt) {
  const std::size_t n = state_dim(f);
  validate_midpoint(m, n);
  EagerOps ops;
  Tensor fx = field_eval(f, x);
  std::vector<double> dts(x.rank() == 2 ? x.shape[0] : 1, dt);
  MidpointPrediction out;
  out.midpoint = midpoint_apply(ops, m, {}, x, fx, dts);
  if (const auto* an = std::get_if<AnalyticLinearMidpoint>(&m.v)) {
    out.gain = analytic_linear_gain(an->a_matrix, dt, an->series_terms).gain;
    out.gain_shape = GainShape::Full;
  } else if (const auto* le = std::get_if<LearnedMidpoint>(&m.v)) {
    Tensor dtcol = x.rank() == 2 ? Tensor({x.shape[0], 1}, std::vector<double>(dts))
                                 : Tensor::vec({dt});
    Tensor gain = mlp_eval(le->net, concat_cols(x, dtcol));
    if (x.rank() == 1 && le->shape == GainShape::Full)
      gain = Tensor::matrix(n, n, std::move(gain.data));
    out.gain = std::move(gain);
    out.gain_shape = le->shape;
  } else if (const auto* pe = std::get_if<PerturbedMidpoint>(&m.v)) {
    MidpointPrediction base = predict_midpoint(*pe->base, f, x, dt);
    out.gain = std::move(base.gain);
    out.gain_shape = base.gain_shape;
  } else {
    out.gain = Tensor::zeros({n});
    out.gain_shape = GainShape::Diag;
  }
  return out;
}

Tensor remainder_estimate(const VectorField& f, const MidpointModel& m, const Tensor& x, double dt,
                          int p) {
  if (p < 1) throw ConfigError("remainder_estimate: order must be >= 1");
  MidpointPrediction pred = predict_midpoint(m, f, x, dt);
  auto coeffs = ode_taylor_coefficients(f, pred.midpoint, p);
  double dtp = 1.0;
  for (int i = 0; i < p; ++i) dtp *= dt;
  return scale(coeffs[static_cast<std::size_t>(p)], dtp);
}

}  // namespace tlode
