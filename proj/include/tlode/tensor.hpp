#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace tlode {

// Dense row-major float64 tensor of rank 1 or 2. States are rank-1 [n] or
// batched rank-2 [B x n]; weight matrices are rank-2 [out x in].
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_, std::vector<double> data_);

  static Tensor zeros(const std::vector<std::size_t>& shape);
  static Tensor full(const std::vector<std::size_t>& shape, double v);
  static Tensor vec(std::initializer_list<double> xs);
  static Tensor vec(std::vector<double> xs);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> xs);
  static Tensor identity(std::size_t n);
  static Tensor scalar(double v);

  std::size_t rank() const { return shape.size(); }
  std::size_t size() const { return data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;
};

// Throws NumericalError naming `what` if any entry is NaN or infinite.
void require_finite(const Tensor& t, const std::string& what);
bool all_finite(const Tensor& t);

// ---- eager kernels (shared by the plain path and the tape's forward pass) --

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
// x [B x in] (or rank-1 [in]) times W^T where W is [out x in].
Tensor matmul_nt(const Tensor& x, const Tensor& w);
// Plain matrix product, rank-2 only: [m x k] * [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
// Adds row vector b [m] to every row of x [B x m] (rank-1 x: plain add).
Tensor add_rowvec(const Tensor& x, const Tensor& b);
// Scales row i of x [B x m] by c[i]; c is [B] or [B x 1]. Rank-1 x: c is [1].
Tensor mul_colvec(const Tensor& x, const Tensor& c);
// Horizontal concatenation of [B x a] and [B x b] (rank-1: vector concat).
Tensor concat_cols(const Tensor& a, const Tensor& b);
// Columns [j0, j1) of x.
Tensor slice_cols(const Tensor& x, std::size_t j0, std::size_t j1);
// Per-row matrix-vector product: g row b holds an [m x n] matrix (row-major,
// m*n entries), v row b is length n; out row b is length m.
Tensor batched_matvec(const Tensor& g, const Tensor& v, std::size_t m, std::size_t n);

Tensor map_tanh(const Tensor& a);
Tensor map_sigmoid(const Tensor& a);
Tensor map_softplus(const Tensor& a);
Tensor map_exp(const Tensor& a);
Tensor map_relu(const Tensor& a);
Tensor map_sin(const Tensor& a);
Tensor map_cos(const Tensor& a);

double sum_all(const Tensor& a);
double sum_squares(const Tensor& a);
double norm2(const Tensor& a);
double norm1(const Tensor& a);
double norm_inf(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);

// ---- small square-matrix helpers (rank-2, n x n) ----

// Gauss-Jordan inverse with partial pivoting; throws NumericalError if the
// matrix is singular to working precision.
Tensor inverse(const Tensor& a);
// Operator norms of a square matrix.
double frobenius_norm(const Tensor& a);

}  // namespace tlode
