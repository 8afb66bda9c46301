#include "tlode/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "tlode/error.hpp"

namespace tlode {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

[[noreturn]] void shape_fail(const std::string& op, const Tensor& a) {
  throw ShapeError(op + ": unsupported shape " + a.shape_str());
}

[[noreturn]] void shape_fail2(const std::string& op, const Tensor& a, const Tensor& b) {
  throw ShapeError(op + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (shape.empty() || shape.size() > 2)
    throw ShapeError("Tensor: rank must be 1 or 2, got rank " + std::to_string(shape.size()));
  if (shape_product(shape) != data.size())
    throw ShapeError("Tensor: shape " + shape_str() + " does not match " +
                     std::to_string(data.size()) + " elements");
}

Tensor Tensor::zeros(const std::vector<std::size_t>& shape) {
  return Tensor(shape, std::vector<double>(shape_product(shape), 0.0));
}

Tensor Tensor::full(const std::vector<std::size_t>& shape, double v) {
  return Tensor(shape, std::vector<double>(shape_product(shape), v));
}

Tensor Tensor::vec(std::initializer_list<double> xs) {
  return Tensor({xs.size()}, std::vector<double>(xs));
}

Tensor Tensor::vec(std::vector<double> xs) {
  const std::size_t n = xs.size();
  return Tensor({n}, std::move(xs));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> xs) {
  return Tensor({rows, cols}, std::move(xs));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t = zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
  return t;
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

std::size_t Tensor::rows() const { return rank() == 2 ? shape[0] : 1; }
std::size_t Tensor::cols() const { return rank() == 2 ? shape[1] : shape[0]; }

double& Tensor::at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? " x " : "") << shape[i];
  os << "]";
  return os.str();
}

bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

void require_finite(const Tensor& t, const std::string& what) {
  if (!all_finite(t)) throw NumericalError(what + ": non-finite value");
}

// ---- elementwise ----

namespace {

Tensor zip(const std::string& op, const Tensor& a, const Tensor& b, double (*f)(double, double)) {
  if (!a.same_shape(b)) shape_fail2(op, a, b);
  Tensor out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
  return out;
}

Tensor map(const Tensor& a, double (*f)(double)) {
  Tensor out = a;
  for (auto& v : out.data) v = f(v);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return zip("add", a, b, [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return zip("sub", a, b, [](double x, double y) { return x - y; });
}
Tensor hadamard(const Tensor& a, const Tensor& b) {
  return zip("hadamard", a, b, [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (auto& v : out.data) v *= c;
  return out;
}

Tensor add_const(const Tensor& a, double c) {
  Tensor out = a;
  for (auto& v : out.data) v += c;
  return out;
}

Tensor matmul_nt(const Tensor& x, const Tensor& w) {
  if (w.rank() != 2) shape_fail("matmul_nt: weight", w);
  const std::size_t out_dim = w.shape[0], in_dim = w.shape[1];
  if (x.cols() != in_dim) shape_fail2("matmul_nt", x, w);
  const std::size_t b = x.rows();
  Tensor out = x.rank() == 1 ? Tensor::zeros({out_dim}) : Tensor::zeros({b, out_dim});
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t o = 0; o < out_dim; ++o) {
      double acc = 0.0;
      const double* xr = x.data.data() + r * in_dim;
      const double* wr = w.data.data() + o * in_dim;
      for (std::size_t k = 0; k < in_dim; ++k) acc += xr[k] * wr[k];
      out.data[r * out_dim + o] = acc;
    }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) shape_fail2("matmul", a, b);
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const double av = a.data[i * k + l];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += av * b.data[l * n + j];
    }
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  if (b.rank() != 1) shape_fail("add_rowvec: bias", b);
  if (x.rank() == 1) return add(x, b);
  if (x.shape[1] != b.shape[0]) shape_fail2("add_rowvec", x, b);
  Tensor out = x;
  for (std::size_t r = 0; r < x.shape[0]; ++r)
    for (std::size_t j = 0; j < x.shape[1]; ++j) out.data[r * x.shape[1] + j] += b.data[j];
  return out;
}

Tensor mul_colvec(const Tensor& x, const Tensor& c) {
  const std::size_t b = x.rows();
  if (c.size() != b) shape_fail2("mul_colvec", x, c);
  Tensor out = x;
  const std::size_t m = x.cols();
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j = 0; j < m; ++j) out.data[r * m + j] *= c.data[r];
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank()) shape_fail2("concat_cols", a, b);
  if (a.rank() == 1) {
    std::vector<double> d = a.data;
    d.insert(d.end(), b.data.begin(), b.data.end());
    return Tensor::vec(std::move(d));
  }
  if (a.shape[0] != b.shape[0]) shape_fail2("concat_cols", a, b);
  const std::size_t rows = a.shape[0], ca = a.shape[1], cb = b.shape[1];
  Tensor out = Tensor::zeros({rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < ca; ++j) out.data[r * (ca + cb) + j] = a.data[r * ca + j];
    for (std::size_t j = 0; j < cb; ++j) out.data[r * (ca + cb) + ca + j] = b.data[r * cb + j];
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t j0, std::size_t j1) {
  const std::size_t m = x.cols();
  if (j0 >= j1 || j1 > m) throw ShapeError("slice_cols: bad range on " + x.shape_str());
  const std::size_t w = j1 - j0, b = x.rows();
  Tensor out = x.rank() == 1 ? Tensor::zeros({w}) : Tensor::zeros({b, w});
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j = 0; j < w; ++j) out.data[r * w + j] = x.data[r * m + j0 + j];
  return out;
}

Tensor batched_matvec(const Tensor& g, const Tensor& v, std::size_t m, std::size_t n) {
  const std::size_t b = g.rows();
  if (g.cols() != m * n || v.cols() != n || v.rows() != b) shape_fail2("batched_matvec", g, v);
  Tensor out = g.rank() == 1 ? Tensor::zeros({m}) : Tensor::zeros({b, m});
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += g.data[r * m * n + i * n + j] * v.data[r * n + j];
      out.data[r * m + i] = acc;
    }
  return out;
}

namespace {
double softplus_scalar(double x) {
  // Stable log(1 + e^x).
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}
double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double relu_scalar(double x) { return x > 0.0 ? x : 0.0; }
}  // namespace

Tensor map_tanh(const Tensor& a) { return map(a, [](double x) { return std::tanh(x); }); }
Tensor map_sigmoid(const Tensor& a) { return map(a, sigmoid_scalar); }
Tensor map_softplus(const Tensor& a) { return map(a, softplus_scalar); }
Tensor map_exp(const Tensor& a) { return map(a, [](double x) { return std::exp(x); }); }
Tensor map_relu(const Tensor& a) { return map(a, relu_scalar); }
Tensor map_sin(const Tensor& a) { return map(a, [](double x) { return std::sin(x); }); }
Tensor map_cos(const Tensor& a) { return map(a, [](double x) { return std::cos(x); }); }

double sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data) s += v;
  return s;
}

double sum_squares(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data) s += v * v;
  return s;
}

double norm2(const Tensor& a) { return std::sqrt(sum_squares(a)); }

double norm1(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data) s += std::fabs(v);
  return s;
}

double norm_inf(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data) s = std::max(s, std::fabs(v));
  return s;
}

double dot(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_fail2("dot", a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

Tensor inverse(const Tensor& a) {
  if (a.rank() != 2 || a.shape[0] != a.shape[1]) shape_fail("inverse", a);
  const std::size_t n = a.shape[0];
  Tensor work = a;
  Tensor inv = Tensor::identity(n);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    double best = std::fabs(work.at(col, col));
    for (std::size_t r = col + 1; r < n; ++r) {
      const double v = std::fabs(work.at(r, col));
      if (v > best) {
        best = v;
        pivot = r;
      }
    }
    if (best < 1e-300) throw NumericalError("inverse: matrix is singular to working precision");
    if (pivot != col)
      for (std::size_t j = 0; j < n; ++j) {
        std::swap(work.at(pivot, j), work.at(col, j));
        std::swap(inv.at(pivot, j), inv.at(col, j));
      }
    const double d = work.at(col, col);
    for (std::size_t j = 0; j < n; ++j) {
      work.at(col, j) /= d;
      inv.at(col, j) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = work.at(r, col);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        work.at(r, j) -= f * work.at(col, j);
        inv.at(r, j) -= f * inv.at(col, j);
      }
    }
  }
  return inv;
}

double frobenius_norm(const Tensor& a) { return norm2(a); }

}  // namespace tlode
