#include "tlode/tape.hpp"

#include <cmath>

#include "tlode/error.hpp"

namespace tlode {

Var Tape::push(Node n) {
  if (nodes_.size() >= static_cast<std::size_t>(INT32_MAX))
    throw ShapeError("Tape: node limit exceeded");
  nodes_.push_back(std::move(n));
  grads_valid_ = false;
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || static_cast<std::size_t>(v.i) >= nodes_.size())
    throw ShapeError("Tape: invalid Var handle");
  return nodes_[static_cast<std::size_t>(v.i)];
}

Var Tape::leaf(Tensor v) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(v);
  Var out = push(std::move(n));
  inputs_.push_back(out.i);
  return out;
}

Var Tape::constant(Tensor v) { return leaf(std::move(v)); }

Var Tape::placeholder(std::vector<std::size_t> shape) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = Tensor::zeros(shape);
  n.has_value = false;
  Var out = push(std::move(n));
  inputs_.push_back(out.i);
  values_valid_ = false;
  return out;
}

Var Tape::param(Tensor v, std::string name) {
  require_finite(v, "Tape::param '" + name + "'");
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(v);
  n.requires_grad = true;
  n.is_param = true;
  Var out = push(std::move(n));
  params_.push_back(out.i);
  param_names_.push_back(std::move(name));
  return out;
}

Var Tape::unary(OpKind kind, Var a, Tensor value) {
  Node n;
  n.kind = kind;
  n.a = a.i;
  n.requires_grad = node(a).requires_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::binary(OpKind kind, Var a, Var b, Tensor value) {
  Node n;
  n.kind = kind;
  n.a = a.i;
  n.b = b.i;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) { return binary(OpKind::kAdd, a, b, tlode::add(value(a), value(b))); }
Var Tape::sub(Var a, Var b) { return binary(OpKind::kSub, a, b, tlode::sub(value(a), value(b))); }
Var Tape::mul(Var a, Var b) {
  return binary(OpKind::kMul, a, b, tlode::hadamard(value(a), value(b)));
}

Var Tape::scale(Var a, double c) {
  Var out = unary(OpKind::kScale, a, tlode::scale(value(a), c));
  nodes_.back().c = c;
  return out;
}

Var Tape::matmul_nt(Var x, Var w) {
  return binary(OpKind::kMatmulNT, x, w, tlode::matmul_nt(value(x), value(w)));
}

Var Tape::add_rowvec(Var x, Var bias) {
  return binary(OpKind::kAddRowVec, x, bias, tlode::add_rowvec(value(x), value(bias)));
}

Var Tape::mul_colvec(Var x, Var c) {
  return binary(OpKind::kMulColVec, x, c, tlode::mul_colvec(value(x), value(c)));
}

Var Tape::concat_cols(Var a, Var b) {
  return binary(OpKind::kConcatCols, a, b, tlode::concat_cols(value(a), value(b)));
}

Var Tape::slice_cols(Var x, std::size_t j0, std::size_t j1) {
  Var out = unary(OpKind::kSliceCols, x, tlode::slice_cols(value(x), j0, j1));
  nodes_.back().aux0 = j0;
  nodes_.back().aux1 = j1;
  return out;
}

Var Tape::batched_matvec(Var g, Var v, std::size_t m, std::size_t n) {
  Var out = binary(OpKind::kBatchedMatvec, g, v, tlode::batched_matvec(value(g), value(v), m, n));
  nodes_.back().aux0 = m;
  nodes_.back().aux1 = n;
  return out;
}

Var Tape::tanh(Var a) { return unary(OpKind::kTanh, a, map_tanh(value(a))); }
Var Tape::sigmoid(Var a) { return unary(OpKind::kSigmoid, a, map_sigmoid(value(a))); }
Var Tape::softplus(Var a) { return unary(OpKind::kSoftplus, a, map_softplus(value(a))); }
Var Tape::exp(Var a) { return unary(OpKind::kExp, a, map_exp(value(a))); }
Var Tape::relu(Var a) { return unary(OpKind::kRelu, a, map_relu(value(a))); }
Var Tape::sin(Var a) { return unary(OpKind::kSin, a, map_sin(value(a))); }
Var Tape::cos(Var a) { return unary(OpKind::kCos, a, map_cos(value(a))); }

Var Tape::sum(Var a) { return unary(OpKind::kSum, a, Tensor::scalar(sum_all(value(a)))); }

const Tensor& Tape::value(Var v) const { return node(v).value; }

void Tape::mark_output(Var v) {
  node(v);  // validate
  outputs_.push_back(v.i);
}

Tensor Tape::compute(const Node& n) const {
  const Tensor& a = n.a >= 0 ? nodes_[static_cast<std::size_t>(n.a)].value : Tensor();
  switch (n.kind) {
    case OpKind::kLeaf: return n.value;
    case OpKind::kAdd: return tlode::add(a, nodes_[static_cast<std::size_t>(n.b)].value);
    case OpKind::kSub: return tlode::sub(a, nodes_[static_cast<std::size_t>(n.b)].value);
    case OpKind::kMul: return tlode::hadamard(a, nodes_[static_cast<std::size_t>(n.b)].value);
    case OpKind::kScale: return tlode::scale(a, n.c);
    case OpKind::kMatmulNT: return tlode::matmul_nt(a, nodes_[static_cast<std::size_t>(n.b)].value);
    case OpKind::kAddRowVec:
      return tlode::add_rowvec(a, nodes_[static_cast<std::size_t>(n.b)].value);
    case OpKind::kMulColVec:
      return tlode::mul_colvec(a, nodes_[static_cast<std::size_t>(n.b)].value);
    case OpKind::kConcatCols:
      return tlode::concat_cols(a, nodes_[static_cast<std::size_t>(n.b)].value);
    case OpKind::kSliceCols: return tlode::slice_cols(a, n.aux0, n.aux1);
    case OpKind::kBatchedMatvec:
      return tlode::batched_matvec(a, nodes_[static_cast<std::size_t>(n.b)].value, n.aux0, n.aux1);
    case OpKind::kTanh: return map_tanh(a);
    case OpKind::kSigmoid: return map_sigmoid(a);
    case OpKind::kSoftplus: return map_softplus(a);
    case OpKind::kExp: return map_exp(a);
    case OpKind::kRelu: return map_relu(a);
    case OpKind::kSin: return map_sin(a);
    case OpKind::kCos: return map_cos(a);
    case OpKind::kSum: return Tensor::scalar(sum_all(a));
  }
  throw ShapeError("Tape::compute: unknown op");
}

std::vector<Tensor> Tape::forward(const std::vector<Tensor>& leaf_values) {
  if (leaf_values.size() != inputs_.size())
    throw ShapeError("Tape::forward: expected " + std::to_string(inputs_.size()) +
                     " input values, got " + std::to_string(leaf_values.size()));
  for (std::size_t k = 0; k < inputs_.size(); ++k) {
    Node& n = nodes_[static_cast<std::size_t>(inputs_[k])];
    if (!n.value.same_shape(leaf_values[k]))
      throw ShapeError("Tape::forward: input " + std::to_string(k) + " shape mismatch: expected " +
                       n.value.shape_str() + ", got " + leaf_values[k].shape_str());
    n.value = leaf_values[k];
    n.has_value = true;
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.kind != OpKind::kLeaf) n.value = compute(n);
  }
  values_valid_ = true;
  grads_valid_ = false;
  std::vector<Tensor> out;
  out.reserve(outputs_.size());
  for (auto idx : outputs_) out.push_back(nodes_[static_cast<std::size_t>(idx)].value);
  return out;
}

void Tape::check_ready(const char* who) const {
  if (!values_valid_)
    throw NumericalError(std::string(who) + ": called before forward(); tape has unset inputs");
}

void Tape::backward(Var objective) {
  check_ready("Tape::backward");
  const Tensor& v = value(objective);
  if (v.size() != 1)
    throw ShapeError("Tape::backward: objective has shape " + v.shape_str() +
                     "; pass a cotangent for non-scalar outputs");
  backward(objective, Tensor::full(v.shape, 1.0));
}

void Tape::backward(Var output, const Tensor& cotangent) {
  check_ready("Tape::backward");
  const Node& out = node(output);
  if (!out.value.same_shape(cotangent))
    throw ShapeError("Tape::backward: cotangent shape " + cotangent.shape_str() +
                     " does not match output shape " + out.value.shape_str());
  grads_.assign(nodes_.size(), Tensor());
  auto grad_ref = [&](std::int32_t i) -> Tensor& {
    Tensor& g = grads_[static_cast<std::size_t>(i)];
    if (g.data.empty()) g = Tensor::zeros(nodes_[static_cast<std::size_t>(i)].value.shape);
    return g;
  };
  auto accum = [&](std::int32_t i, const Tensor& dv) {
    if (i < 0 || !nodes_[static_cast<std::size_t>(i)].requires_grad) return;
    Tensor& g = grad_ref(i);
    for (std::size_t k = 0; k < g.data.size(); ++k) g.data[k] += dv.data[k];
  };

  grad_ref(output.i) = cotangent;
  for (std::int32_t i = output.i; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad && i != output.i) continue;
    const Tensor& g = grads_[static_cast<std::size_t>(i)];
    if (g.data.empty()) continue;
    const Tensor* av = n.a >= 0 ? &nodes_[static_cast<std::size_t>(n.a)].value : nullptr;
    const Tensor* bv = n.b >= 0 ? &nodes_[static_cast<std::size_t>(n.b)].value : nullptr;
    switch (n.kind) {
      case OpKind::kLeaf:
        break;
      case OpKind::kAdd:
        accum(n.a, g);
        accum(n.b, g);
        break;
      case OpKind::kSub:
        accum(n.a, g);
        accum(n.b, tlode::scale(g, -1.0));
        break;
      case OpKind::kMul:
        accum(n.a, hadamard(g, *bv));
        accum(n.b, hadamard(g, *av));
        break;
      case OpKind::kScale:
        accum(n.a, tlode::scale(g, n.c));
        break;
      case OpKind::kMatmulNT: {
        // y = x * W^T: dx = g * W, dW[o,k] = sum_b g[b,o] x[b,k]
        const Tensor& w = *bv;
        const std::size_t out_dim = w.shape[0], in_dim = w.shape[1];
        const std::size_t rows = av->rows();
        if (nodes_[static_cast<std::size_t>(n.a)].requires_grad) {
          Tensor dx = av->rank() == 1 ? Tensor::zeros({in_dim}) : Tensor::zeros({rows, in_dim});
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < out_dim; ++o) {
              const double gv = g.data[r * out_dim + o];
              if (gv == 0.0) continue;
              for (std::size_t k = 0; k < in_dim; ++k)
                dx.data[r * in_dim + k] += gv * w.data[o * in_dim + k];
            }
          accum(n.a, dx);
        }
        if (nodes_[static_cast<std::size_t>(n.b)].requires_grad) {
          Tensor dw = Tensor::zeros({out_dim, in_dim});
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < out_dim; ++o) {
              const double gv = g.data[r * out_dim + o];
              if (gv == 0.0) continue;
              for (std::size_t k = 0; k < in_dim; ++k)
                dw.data[o * in_dim + k] += gv * av->data[r * in_dim + k];
            }
          accum(n.b, dw);
        }
        break;
      }
      case OpKind::kAddRowVec: {
        accum(n.a, g);
        if (nodes_[static_cast<std::size_t>(n.b)].requires_grad) {
          const std::size_t m = bv->shape[0];
          Tensor db = Tensor::zeros({m});
          const std::size_t rows = g.rows();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < m; ++j) db.data[j] += g.data[r * m + j];
          accum(n.b, db);
        }
        break;
      }
      case OpKind::kMulColVec: {
        const std::size_t rows = av->rows(), m = av->cols();
        if (nodes_[static_cast<std::size_t>(n.a)].requires_grad)
          accum(n.a, tlode::mul_colvec(g, *bv));
        if (nodes_[static_cast<std::size_t>(n.b)].requires_grad) {
          Tensor dc = Tensor::zeros(bv->shape);
          for (std::size_t r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += g.data[r * m + j] * av->data[r * m + j];
            dc.data[r] = acc;
          }
          accum(n.b, dc);
        }
        break;
      }
      case OpKind::kConcatCols: {
        const std::size_t ca = av->cols();
        const std::size_t cb = bv->cols();
        accum(n.a, tlode::slice_cols(g, 0, ca));
        accum(n.b, tlode::slice_cols(g, ca, ca + cb));
        break;
      }
      case OpKind::kSliceCols: {
        if (nodes_[static_cast<std::size_t>(n.a)].requires_grad) {
          Tensor dx = Tensor::zeros(av->shape);
          const std::size_t m = av->cols(), w = n.aux1 - n.aux0, rows = av->rows();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j)
              dx.data[r * m + n.aux0 + j] = g.data[r * w + j];
          accum(n.a, dx);
        }
        break;
      }
      case OpKind::kBatchedMatvec: {
        const std::size_t m = n.aux0, nn = n.aux1;
        const std::size_t rows = av->rows();
        if (nodes_[static_cast<std::size_t>(n.a)].requires_grad) {
          Tensor dg = Tensor::zeros(av->shape);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i2 = 0; i2 < m; ++i2) {
              const double gv = g.data[r * m + i2];
              if (gv == 0.0) continue;
              for (std::size_t j = 0; j < nn; ++j)
                dg.data[r * m * nn + i2 * nn + j] = gv * bv->data[r * nn + j];
            }
          accum(n.a, dg);
        }
        if (nodes_[static_cast<std::size_t>(n.b)].requires_grad) {
          Tensor dv = Tensor::zeros(bv->shape);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i2 = 0; i2 < m; ++i2) {
              const double gv = g.data[r * m + i2];
              if (gv == 0.0) continue;
              for (std::size_t j = 0; j < nn; ++j)
                dv.data[r * nn + j] += gv * av->data[r * m * nn + i2 * nn + j];
            }
          accum(n.b, dv);
        }
        break;
      }
      case OpKind::kTanh: {
        Tensor d = g;
        for (std::size_t k = 0; k < d.data.size(); ++k) {
          const double y = n.value.data[k];
          d.data[k] *= 1.0 - y * y;
        }
        accum(n.a, d);
        break;
      }
      case OpKind::kSigmoid: {
        Tensor d = g;
        for (std::size_t k = 0; k < d.data.size(); ++k) {
          const double y = n.value.data[k];
          d.data[k] *= y * (1.0 - y);
        }
        accum(n.a, d);
        break;
      }
      case OpKind::kSoftplus: {
        Tensor d = g;
        for (std::size_t k = 0; k < d.data.size(); ++k)
          d.data[k] *= 1.0 / (1.0 + std::exp(-av->data[k]));
        accum(n.a, d);
        break;
      }
      case OpKind::kExp:
        accum(n.a, hadamard(g, n.value));
        break;
      case OpKind::kRelu: {
        Tensor d = g;
        for (std::size_t k = 0; k < d.data.size(); ++k)
          if (av->data[k] <= 0.0) d.data[k] = 0.0;
        accum(n.a, d);
        break;
      }
      case OpKind::kSin: {
        Tensor d = g;
        for (std::size_t k = 0; k < d.data.size(); ++k) d.data[k] *= std::cos(av->data[k]);
        accum(n.a, d);
        break;
      }
      case OpKind::kCos: {
        Tensor d = g;
        for (std::size_t k = 0; k < d.data.size(); ++k) d.data[k] *= -std::sin(av->data[k]);
        accum(n.a, d);
        break;
      }
      case OpKind::kSum: {
        if (nodes_[static_cast<std::size_t>(n.a)].requires_grad)
          accum(n.a, Tensor::full(av->shape, g.data[0]));
        break;
      }
    }
  }
  grads_valid_ = true;
}

Tensor Tape::grad(Var v) const {
  if (!grads_valid_) throw NumericalError("Tape::grad: backward() has not run");
  const Node& n = node(v);
  const Tensor& g = grads_[static_cast<std::size_t>(v.i)];
  if (g.data.empty()) return Tensor::zeros(n.value.shape);
  return g;
}

std::vector<Tensor> Tape::param_grads() const {
  if (!grads_valid_) throw NumericalError("Tape::param_grads: backward() has not run");
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (auto idx : params_) out.push_back(grad(Var{idx}));
  return out;
}

const std::vector<std::string>& Tape::param_names() const { return param_names_; }

}  // namespace tlode
