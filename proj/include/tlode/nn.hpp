#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tlode/error.hpp"
#include "tlode/ops.hpp"
#include "tlode/rng.hpp"
#include "tlode/tensor.hpp"

namespace tlode {

enum class Activation { None, Tanh, Sigmoid, Softplus, Exp, Relu };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);
// True for activations whose derivatives of every order exist (safe inside
// Taylor series propagation). Relu is not smooth; None (identity) is.
bool activation_is_smooth(Activation a);

// Fully connected net. widths = [in, h1, ..., out]; acts has one entry per
// layer. Parameters are stored [W0, b0, W1, b1, ...] with W [out x in].
struct Mlp {
  std::vector<std::size_t> widths;
  std::vector<Activation> acts;
  std::vector<Tensor> params;

  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  std::size_t layer_count() const { return acts.size(); }
  std::size_t param_count() const;
  bool all_smooth() const;

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases.
  // zero_last_layer starts the final layer at exactly zero, which makes
  // residual-style corrections start from the uncorrected scheme.
  static Mlp make(std::vector<std::size_t> widths, std::vector<Activation> acts, Rng& rng,
                  bool zero_last_layer = false);

  std::vector<std::string> param_labels(const std::string& prefix) const;
};

template <class Ops>
typename Ops::V apply_activation(Ops& ops, Activation a, typename Ops::V x) {
  switch (a) {
    case Activation::None: return x;
    case Activation::Tanh: return ops.tanh(x);
    case Activation::Sigmoid: return ops.sigmoid(x);
    case Activation::Softplus: return ops.softplus(x);
    case Activation::Exp: return ops.exp(x);
    case Activation::Relu: return ops.relu(x);
  }
  throw ShapeError("apply_activation: unknown activation");
}

// Applies the net to x ([B x in] or [in]). `params` supplies the parameter
// handles (e.g. registered on a tape); empty means lift net.params as
// constants.
template <class Ops>
typename Ops::V mlp_apply(Ops& ops, const Mlp& net, std::span<const typename Ops::V> params,
                          typename Ops::V x) {
  std::vector<typename Ops::V> lifted;
  if (params.empty()) {
    lifted.reserve(net.params.size());
    for (const auto& p : net.params) lifted.push_back(ops.constant(p));
    params = lifted;
  }
  if (params.size() != 2 * net.layer_count())
    throw ShapeError("mlp_apply: expected " + std::to_string(2 * net.layer_count()) +
                     " parameter tensors, got " + std::to_string(params.size()));
  typename Ops::V h = x;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    h = ops.add_rowvec(ops.matmul_nt(h, params[2 * l]), params[2 * l + 1]);
    h = apply_activation(ops, net.acts[l], h);
  }
  return h;
}

Tensor mlp_eval(const Mlp& net, const Tensor& x);

}  // namespace tlode
