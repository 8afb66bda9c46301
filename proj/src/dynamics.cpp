#include "tlode/dynamics.hpp"

#include <cmath>

#include "tlode/error.hpp"

namespace tlode {

std::size_t state_dim(const VectorField& f) {
  if (const auto* lin = std::get_if<LinearField>(&f)) return lin->a_matrix.shape[0];
  if (std::get_if<PendulumField>(&f)) return 2;
  if (const auto* q = std::get_if<QuadraticField>(&f)) return q->c_matrix.shape[0];
  return std::get<MlpField>(f).net.input_dim();
}

void validate_field(const VectorField& f) {
  if (const auto* lin = std::get_if<LinearField>(&f)) {
    if (lin->a_matrix.rank() != 2 || lin->a_matrix.shape[0] != lin->a_matrix.shape[1])
      throw ConfigError("LinearField: matrix must be square, got " + lin->a_matrix.shape_str());
    return;
  }
  if (std::get_if<PendulumField>(&f)) return;
  if (const auto* q = std::get_if<QuadraticField>(&f)) {
    const std::size_t n = q->c_matrix.shape[0];
    if (q->b_matrix.shape != q->c_matrix.shape || q->c_matrix.shape[1] != n ||
        q->d.size() != n)
      throw ConfigError("QuadraticField: inconsistent dimensions");
    return;
  }
  const auto& m = std::get<MlpField>(f);
  if (m.net.input_dim() != m.net.output_dim())
    throw ConfigError("MlpField: net must map the state to itself, got " +
                      std::to_string(m.net.input_dim()) + " -> " +
                      std::to_string(m.net.output_dim()));
  for (auto a : m.net.acts)
    if (!activation_is_smooth(a))
      throw ConfigError("MlpField: activation '" + activation_name(a) +
                        "' is not smooth and cannot serve as dynamics; use tanh, sigmoid, "
                        "softplus, exp, or none");
}

VectorField make_mlp_field(Mlp net) {
  VectorField f = MlpField{std::move(net)};
  validate_field(f);
  return f;
}

Tensor field_eval(const VectorField& f, const Tensor& x) {
  EagerOps ops;
  return field_apply(ops, f, {}, x);
}

Tensor expm(const Tensor& a) {
  if (a.rank() != 2 || a.shape[0] != a.shape[1])
    throw ShapeError("expm: matrix must be square, got " + a.shape_str());
  const std::size_t n = a.shape[0];
  // Scale so the series argument has norm <= 0.5, sum, then square back.
  double nrm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += std::fabs(a.at(i, j));
    nrm = std::max(nrm, row);
  }
  int squarings = 0;
  Tensor b = a;
  if (nrm > 0.5) {
    squarings = static_cast<int>(std::ceil(std::log2(nrm / 0.5)));
    b = scale(a, std::ldexp(1.0, -squarings));
  }
  Tensor result = Tensor::identity(n);
  Tensor term = Tensor::identity(n);
  for (int k = 1; k <= 64; ++k) {
    term = scale(matmul(term, b), 1.0 / k);
    result = add(result, term);
    if (norm_inf(term) < 1e-18 * std::max(1.0, norm_inf(result))) break;
  }
  for (int s = 0; s < squarings; ++s) result = matmul(result, result);
  return result;
}

Tensor exact_linear_solution(const Tensor& a, const Tensor& x0, double t) {
  return matmul_nt(x0, expm(scale(a, t)));
}

std::pair<double, double> eigenvalues_2x2(const Tensor& a) {
  if (a.rank() != 2 || a.shape[0] != 2 || a.shape[1] != 2)
    throw ShapeError("eigenvalues_2x2: need a 2x2 matrix, got " + a.shape_str());
  const double tr = a.at(0, 0) + a.at(1, 1);
  const double det = a.at(0, 0) * a.at(1, 1) - a.at(0, 1) * a.at(1, 0);
  const double disc = tr * tr / 4.0 - det;
  if (disc < 0.0) throw NumericalError("eigenvalues_2x2: complex eigenvalue pair");
  const double root = std::sqrt(disc);
  return {tr / 2.0 - root, tr / 2.0 + root};
}

LinearField make_stiff_system(const StiffSystemConfig& cfg) {
  Tensor a = Tensor::matrix(2, 2, {cfg.lambda_slow, 0.0, 0.0, cfg.lambda_fast});
  if (cfg.rotated) {
    const double c = std::cos(cfg.angle), s = std::sin(cfg.angle);
    const Tensor v = Tensor::matrix(2, 2, {c, -s, s, c});
    const Tensor vinv = Tensor::matrix(2, 2, {c, s, -s, c});
    a = matmul(matmul(v, a), vinv);
  }
  return LinearField{a};
}

LipschitzEstimate lipschitz_estimate(const VectorField& f, const Tensor& lo, const Tensor& hi,
                                     std::size_t samples, Rng& rng) {
  const std::size_t n = state_dim(f);
  if (lo.size() != n || hi.size() != n)
    throw ShapeError("lipschitz_estimate: box bounds must have the state dimension");
  LipschitzEstimate est;
  if (const auto* lin = std::get_if<LinearField>(&f)) {
    // |f_k(x) - f_k(y)| = |row_k . (x - y)| <= ||row_k||_2 ||x - y||_2, tight.
    est.component_bounds = Tensor::zeros({n});
    for (std::size_t k = 0; k < n; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += lin->a_matrix.at(k, j) * lin->a_matrix.at(k, j);
      est.component_bounds.data[k] = std::sqrt(s);
    }
  } else {
    if (samples < 2) throw ConfigError("lipschitz_estimate: need at least 2 samples");
    std::vector<Tensor> pts, vals;
    pts.reserve(samples);
    vals.reserve(samples);
    for (std::size_t i = 0; i < samples; ++i) {
      Tensor x = Tensor::zeros({n});
      for (std::size_t k = 0; k < n; ++k) x.data[k] = rng.uniform(lo.data[k], hi.data[k]);
      vals.push_back(field_eval(f, x));
      pts.push_back(std::move(x));
    }
    est.component_bounds = Tensor::zeros({n});
    for (std::size_t i = 0; i < samples; ++i)
      for (std::size_t j = i + 1; j < samples; ++j) {
        const double dist = norm2(sub(pts[i], pts[j]));
        if (dist < 1e-12) continue;
        for (std::size_t k = 0; k < n; ++k) {
          const double r = std::fabs(vals[i].data[k] - vals[j].data[k]) / dist;
          est.component_bounds.data[k] = std::max(est.component_bounds.data[k], r);
        }
      }
  }
  est.l2 = norm2(est.component_bounds);
  return est;
}

}  // namespace tlode
