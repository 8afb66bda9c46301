#pragma once

#include "tlode/tape.hpp"
#include "tlode/tensor.hpp"

namespace tlode {

// Numeric kernels are written once as templates over an Ops policy and
// instantiated twice: EagerOps computes plain Tensor values (inference),
// TapeOps records the same computation on a Tape (training). `val()` exposes
// the concrete value either way, so step-size control and logging can read
// numbers without differentiating through them.

struct EagerOps {
  using V = Tensor;
  V constant(Tensor t) const { return t; }
  V add(const V& a, const V& b) const { return tlode::add(a, b); }
  V sub(const V& a, const V& b) const { return tlode::sub(a, b); }
  V mul(const V& a, const V& b) const { return tlode::hadamard(a, b); }
  V scale(const V& a, double c) const { return tlode::scale(a, c); }
  V matmul_nt(const V& x, const V& w) const { return tlode::matmul_nt(x, w); }
  V add_rowvec(const V& x, const V& b) const { return tlode::add_rowvec(x, b); }
  V mul_colvec(const V& x, const V& c) const { return tlode::mul_colvec(x, c); }
  V concat_cols(const V& a, const V& b) const { return tlode::concat_cols(a, b); }
  V slice_cols(const V& x, std::size_t j0, std::size_t j1) const {
    return tlode::slice_cols(x, j0, j1);
  }
  V batched_matvec(const V& g, const V& v, std::size_t m, std::size_t n) const {
    return tlode::batched_matvec(g, v, m, n);
  }
  V tanh(const V& a) const { return map_tanh(a); }
  V sigmoid(const V& a) const { return map_sigmoid(a); }
  V softplus(const V& a) const { return map_softplus(a); }
  V exp(const V& a) const { return map_exp(a); }
  V relu(const V& a) const { return map_relu(a); }
  V sin(const V& a) const { return map_sin(a); }
  V cos(const V& a) const { return map_cos(a); }
  V sum(const V& a) const { return Tensor::scalar(sum_all(a)); }
  const Tensor& val(const V& v) const { return v; }
};

struct TapeOps {
  Tape* tape = nullptr;
  using V = Var;
  V constant(Tensor t) const { return tape->constant(std::move(t)); }
  V add(V a, V b) const { return tape->add(a, b); }
  V sub(V a, V b) const { return tape->sub(a, b); }
  V mul(V a, V b) const { return tape->mul(a, b); }
  V scale(V a, double c) const { return tape->scale(a, c); }
  V matmul_nt(V x, V w) const { return tape->matmul_nt(x, w); }
  V add_rowvec(V x, V b) const { return tape->add_rowvec(x, b); }
  V mul_colvec(V x, V c) const { return tape->mul_colvec(x, c); }
  V concat_cols(V a, V b) const { return tape->concat_cols(a, b); }
  V slice_cols(V x, std::size_t j0, std::size_t j1) const { return tape->slice_cols(x, j0, j1); }
  V batched_matvec(V g, V v, std::size_t m, std::size_t n) const {
    return tape->batched_matvec(g, v, m, n);
  }
  V tanh(V a) const { return tape->tanh(a); }
  V sigmoid(V a) const { return tape->sigmoid(a); }
  V softplus(V a) const { return tape->softplus(a); }
  V exp(V a) const { return tape->exp(a); }
  V relu(V a) const { return tape->relu(a); }
  V sin(V a) const { return tape->sin(a); }
  V cos(V a) const { return tape->cos(a); }
  V sum(V a) const { return tape->sum(a); }
  const Tensor& val(V v) const { return tape->value(v); }
};

}  // namespace tlode
