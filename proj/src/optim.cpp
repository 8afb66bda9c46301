#include "tlode/optim.hpp"

#include <cmath>

#include "tlode/error.hpp"

namespace tlode {

double adam_effective_lr(double lr0, double decay, std::uint64_t completed_steps) {
  return lr0 * std::exp(-decay * static_cast<double>(completed_steps));
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& cfg, const std::vector<std::string>& names) {
  if (params.size() != grads.size())
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params vs " +
                     std::to_string(grads.size()) + " grads");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Tensor::zeros(p.shape));
      state.v.push_back(Tensor::zeros(p.shape));
    }
  }
  if (state.m.size() != params.size())
    throw ShapeError("adam_step: state was initialized for a different parameter list");

  // Validate every gradient before touching any parameter, so a bad step is
  // rejected atomically.
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!params[i].same_shape(grads[i]))
      throw ShapeError("adam_step: gradient shape mismatch at parameter " + std::to_string(i));
    if (!all_finite(grads[i])) {
      const std::string who = i < names.size() ? names[i] : ("#" + std::to_string(i));
      throw NumericalError("adam_step: non-finite gradient for parameter " + who +
                           "; step rejected");
    }
  }

  const double lr = adam_effective_lr(cfg.lr0, cfg.decay, state.t);
  const std::uint64_t t = state.t + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      m.data[k] = cfg.beta1 * m.data[k] + (1.0 - cfg.beta1) * g.data[k];
      v.data[k] = cfg.beta2 * v.data[k] + (1.0 - cfg.beta2) * g.data[k] * g.data[k];
      const double mhat = m.data[k] / bc1;
      const double vhat = v.data[k] / bc2;
      p.data[k] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  state.t = t;
}

}  // namespace tlode
