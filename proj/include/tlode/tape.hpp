#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tlode/tensor.hpp"

namespace tlode {

// Handle into a Tape. Default-constructed handles are invalid.
struct Var {
  std::int32_t i = -1;
  bool valid() const { return i >= 0; }
};

// Reverse-mode differentiation tape over Tensor-valued operations. Recording
// is eager: each op computes its value immediately. The recorded program can
// be replayed with new input values (forward) and differentiated (backward).
// Gradients flow only into nodes reachable from registered parameters.
class Tape {
 public:
  // Non-differentiated input leaf with a value.
  Var leaf(Tensor v);
  // Alias of leaf(); marks intent for fixed data baked into the graph.
  Var constant(Tensor v);
  // Input leaf with no value yet; forward() must run before backward().
  Var placeholder(std::vector<std::size_t> shape);
  // Trainable leaf; gradients are accumulated for it.
  Var param(Tensor v, std::string name);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double c);
  Var matmul_nt(Var x, Var w);  // x * w^T, w is [out x in]
  Var add_rowvec(Var x, Var bias);
  Var mul_colvec(Var x, Var c);  // row i of x scaled by c[i]
  Var concat_cols(Var a, Var b);
  Var slice_cols(Var x, std::size_t j0, std::size_t j1);
  Var batched_matvec(Var g, Var v, std::size_t m, std::size_t n);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var softplus(Var a);
  Var exp(Var a);
  Var relu(Var a);
  Var sin(Var a);
  Var cos(Var a);
  Var sum(Var a);  // sum of all entries -> scalar [1]

  const Tensor& value(Var v) const;

  void mark_output(Var v);
  // Replays the recorded program with new values for the non-param leaves
  // (in creation order; count and shapes must match). Returns the values of
  // the marked outputs. Replay is bit-exact: identical inputs give identical
  // outputs.
  std::vector<Tensor> forward(const std::vector<Tensor>& leaf_values);

  // Seeds d(objective)/d(objective) = 1 and accumulates adjoints. The
  // objective must be scalar; use the cotangent overload otherwise.
  void backward(Var objective);
  void backward(Var output, const Tensor& cotangent);

  // Adjoint of a node after backward(); zero tensor if the node was not
  // reached.
  Tensor grad(Var v) const;
  // Adjoints of all params in registration order.
  std::vector<Tensor> param_grads() const;
  const std::vector<std::string>& param_names() const;
  std::size_t param_count() const { return params_.size(); }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class OpKind : std::uint8_t {
    kLeaf, kAdd, kSub, kMul, kScale, kMatmulNT, kAddRowVec, kMulColVec,
    kConcatCols, kSliceCols, kBatchedMatvec, kTanh, kSigmoid, kSoftplus,
    kExp, kRelu, kSin, kCos, kSum,
  };

  struct Node {
    OpKind kind;
    std::int32_t a = -1, b = -1;
    double c = 0.0;             // Scale factor
    std::size_t aux0 = 0, aux1 = 0;  // slice bounds / batched_matvec dims
    Tensor value;
    bool requires_grad = false;
    bool is_param = false;
    bool has_value = true;
  };

  Var push(Node n);
  Var unary(OpKind kind, Var a, Tensor value);
  Var binary(OpKind kind, Var a, Var b, Tensor value);
  const Node& node(Var v) const;
  Tensor compute(const Node& n) const;
  void check_ready(const char* who) const;

  std::vector<Node> nodes_;
  std::vector<std::int32_t> inputs_;   // non-param leaves, creation order
  std::vector<std::int32_t> params_;   // param leaves, registration order
  std::vector<std::string> param_names_;
  std::vector<std::int32_t> outputs_;
  std::vector<Tensor> grads_;
  bool values_valid_ = true;
  bool grads_valid_ = false;
};

}  // namespace tlode
