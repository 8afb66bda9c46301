#include "tlode/nn.hpp"

#include <cmath>

namespace tlode {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Softplus: return "softplus";
    case Activation::Exp: return "exp";
    case Activation::Relu: return "relu";
  }
  return "unknown";
}

Activation activation_from_name(const std::string& name) {
  if (name == "none") return Activation::None;
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "softplus") return Activation::Softplus;
  if (name == "exp") return Activation::Exp;
  if (name == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + name + "'");
}

bool activation_is_smooth(Activation a) { return a != Activation::Relu; }

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.size();
  return n;
}

bool Mlp::all_smooth() const {
  for (auto a : acts)
    if (!activation_is_smooth(a)) return false;
  return true;
}

Mlp Mlp::make(std::vector<std::size_t> widths, std::vector<Activation> acts, Rng& rng,
              bool zero_last_layer) {
  if (widths.size() < 2) throw ConfigError("Mlp::make: need at least input and output widths");
  if (acts.size() != widths.size() - 1)
    throw ConfigError("Mlp::make: " + std::to_string(widths.size() - 1) + " layers but " +
                      std::to_string(acts.size()) + " activations");
  Mlp net;
  net.widths = std::move(widths);
  net.acts = std::move(acts);
  for (std::size_t l = 0; l + 1 < net.widths.size(); ++l) {
    const std::size_t in = net.widths[l], out = net.widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    const bool zero = zero_last_layer && l + 2 == net.widths.size();
    Tensor w = Tensor::zeros({out, in});
    Tensor b = Tensor::zeros({out});
    if (!zero) {
      for (auto& v : w.data) v = rng.uniform(-bound, bound);
      for (auto& v : b.data) v = rng.uniform(-bound, bound);
    }
    net.params.push_back(std::move(w));
    net.params.push_back(std::move(b));
  }
  return net;
}

std::vector<std::string> Mlp::param_labels(const std::string& prefix) const {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    out.push_back(prefix + ".w" + std::to_string(l));
    out.push_back(prefix + ".b" + std::to_string(l));
  }
  return out;
}

Tensor mlp_eval(const Mlp& net, const Tensor& x) {
  EagerOps ops;
  return mlp_apply(ops, net, {}, x);
}

}  // namespace tlode
