#include "tlode/taylor_jets.hpp"

#include <cmath>

namespace tlode {

std::vector<Tensor> ode_taylor_coefficients(const VectorField& f, const Tensor& x, int order,
                                            JetCostCounter* counter) {
  EagerOps ops;
  return ode_taylor_coefficients_ops(ops, f, {}, x, order, counter);
}

Tensor truncated_taylor_predict(const VectorField& f, const Tensor& x, double dt, int p) {
  if (p < 1) throw ConfigError("truncated_taylor_predict: order must be >= 1");
  auto coeffs = ode_taylor_coefficients(f, x, p - 1);
  Tensor out = x;
  double dtl = 1.0;
  for (int l = 1; l <= p - 1; ++l) {
    dtl *= dt;
    out = add(out, scale(coeffs[static_cast<std::size_t>(l)], dtl));
  }
  return out;
}

// ---- nested dual-number oracle ----

namespace {

template <class T>
struct Dual {
  T re{};
  T im{};
};

template <class T>
Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) {
  return {a.re + b.re, a.im + b.im};
}
template <class T>
Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) {
  return {a.re - b.re, a.im - b.im};
}
template <class T>
Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) {
  return {a.re * b.re, a.re * b.im + a.im * b.re};
}
template <class T>
Dual<T> operator*(const Dual<T>& a, double c) {
  return {a.re * c, a.im * c};
}
template <class T>
Dual<T> operator+(const Dual<T>& a, double c) {
  return {a.re + c, a.im};
}

inline double g_tanh(double x) { return std::tanh(x); }
inline double g_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double g_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double g_exp(double x) { return std::exp(x); }
inline double g_sin(double x) { return std::sin(x); }
inline double g_cos(double x) { return std::cos(x); }

template <class T>
Dual<T> g_tanh(const Dual<T>& x) {
  const T t = g_tanh(x.re);
  return {t, x.im * ((t * t) * -1.0 + 1.0)};
}
template <class T>
Dual<T> g_sigmoid(const Dual<T>& x) {
  const T s = g_sigmoid(x.re);
  return {s, x.im * (s - s * s)};
}
template <class T>
Dual<T> g_softplus(const Dual<T>& x) {
  return {g_softplus(x.re), x.im * g_sigmoid(x.re)};
}
template <class T>
Dual<T> g_exp(const Dual<T>& x) {
  const T e = g_exp(x.re);
  return {e, x.im * e};
}
template <class T>
Dual<T> g_sin(const Dual<T>& x) {
  return {g_sin(x.re), x.im * g_cos(x.re)};
}
template <class T>
Dual<T> g_cos(const Dual<T>& x) {
  return {g_cos(x.re), x.im * g_sin(x.re) * -1.0};
}

struct OracleCounter {
  std::uint64_t* count = nullptr;
  std::uint64_t weight = 1;
  void bump(std::uint64_t n) const {
    if (count) *count += n * weight;
  }
};

template <class T>
std::vector<T> field_eval_scalar(const VectorField& f, const std::vector<T>& x,
                                 const OracleCounter& c) {
  const std::size_t n = x.size();
  std::vector<T> out(n);
  if (const auto* lin = std::get_if<LinearField>(&f)) {
    for (std::size_t i = 0; i < n; ++i) {
      T acc = x[0] * lin->a_matrix.at(i, 0);
      for (std::size_t j = 1; j < n; ++j) acc = acc + x[j] * lin->a_matrix.at(i, j);
      out[i] = acc;
    }
    c.bump(n * n);
    return out;
  }
  if (const auto* pen = std::get_if<PendulumField>(&f)) {
    out[0] = x[1];
    out[1] = g_sin(x[0]) * -pen->g_over_l;
    c.bump(2);
    return out;
  }
  if (const auto* q = std::get_if<QuadraticField>(&f)) {
    for (std::size_t i = 0; i < n; ++i) {
      T acc = x[0] * x[0] * q->b_matrix.at(i, 0) + x[0] * q->c_matrix.at(i, 0);
      for (std::size_t j = 1; j < n; ++j)
        acc = acc + x[j] * x[j] * q->b_matrix.at(i, j) + x[j] * q->c_matrix.at(i, j);
      out[i] = acc + q->d.data[i];
    }
    c.bump(3 * n * n);
    return out;
  }
  const auto& m = std::get<MlpField>(f);
  std::vector<T> h = x;
  for (std::size_t l = 0; l < m.net.layer_count(); ++l) {
    const Tensor& w = m.net.params[2 * l];
    const Tensor& b = m.net.params[2 * l + 1];
    const std::size_t in = w.shape[1], od = w.shape[0];
    std::vector<T> z(od);
    for (std::size_t o = 0; o < od; ++o) {
      T acc = h[0] * w.at(o, 0);
      for (std::size_t k = 1; k < in; ++k) acc = acc + h[k] * w.at(o, k);
      z[o] = acc + b.data[o];
    }
    c.bump(od * in + od);
    switch (m.net.acts[l]) {
      case Activation::None: break;
      case Activation::Tanh:
        for (auto& v : z) v = g_tanh(v);
        break;
      case Activation::Sigmoid:
        for (auto& v : z) v = g_sigmoid(v);
        break;
      case Activation::Softplus:
        for (auto& v : z) v = g_softplus(v);
        break;
      case Activation::Exp:
        for (auto& v : z) v = g_exp(v);
        break;
      case Activation::Relu:
        throw NumericalError(
            "nested_jvp_coefficients: primitive 'relu' is not differentiable; the oracle "
            "requires a smooth field");
    }
    c.bump(od);
    h = std::move(z);
  }
  return h;
}

template <class T, int Remaining>
std::vector<T> oracle_coeff(const VectorField& f, const std::vector<T>& x, int l,
                            const OracleCounter& c) {
  auto fx = field_eval_scalar(f, x, c);
  if (l == 1) return fx;
  if constexpr (Remaining <= 1) {
    throw ConfigError("nested_jvp_coefficients: order exceeds supported nesting depth");
  } else {
    std::vector<Dual<T>> xd(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) xd[i] = Dual<T>{x[i], fx[i]};
    OracleCounter c2 = c;
    c2.weight = c.weight * 2;
    auto y = oracle_coeff<Dual<T>, Remaining - 1>(f, xd, l - 1, c2);
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = y[i].im * (1.0 / static_cast<double>(l));
    return out;
  }
}

}  // namespace

std::vector<Tensor> nested_jvp_coefficients(const VectorField& f, const Tensor& x, int p,
                                            std::uint64_t* scalar_ops) {
  if (p < 1 || p > kMaxOracleOrder)
    throw ConfigError("nested_jvp_coefficients: order must be in [1, " +
                      std::to_string(kMaxOracleOrder) + "]");
  if (x.rank() != 1)
    throw ShapeError("nested_jvp_coefficients: expected a single state, got " + x.shape_str());
  OracleCounter counter{scalar_ops, 1};
  std::vector<Tensor> result;
  std::vector<double> xv(x.data.begin(), x.data.end());
  for (int l = 1; l <= p; ++l) {
    auto cl = oracle_coeff<double, kMaxOracleOrder>(f, xv, l, counter);
    result.push_back(Tensor::vec(std::move(cl)));
  }
  return result;
}

}  // namespace tlode
