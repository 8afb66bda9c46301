#include "tlode/integrators.hpp"

#include "tlode/error.hpp"

namespace tlode {

std::string scheme_name(Scheme s) {
  switch (s) {
    case Scheme::TaylorLagrange: return "tl";
    case Scheme::TruncatedTaylor: return "truncated";
    case Scheme::Euler: return "euler";
    case Scheme::Rk4: return "rk4";
    case Scheme::HyperEuler: return "hypereuler";
    case Scheme::Dopri5: return "dopri5";
  }
  throw ConfigError("unknown scheme");
}

Scheme scheme_from_name(const std::string& name) {
  if (name == "tl") return Scheme::TaylorLagrange;
  if (name == "truncated") return Scheme::TruncatedTaylor;
  if (name == "euler") return Scheme::Euler;
  if (name == "rk4") return Scheme::Rk4;
  if (name == "hypereuler") return Scheme::HyperEuler;
  if (name == "dopri5") return Scheme::Dopri5;
  throw ConfigError("unknown scheme '" + name +
                    "'; expected tl, truncated, euler, rk4, hypereuler, or dopri5");
}

Tensor tl_step(const VectorField& f, const MidpointModel& mid, const Tensor& x, double dt, int p,
               std::uint64_t* nfe) {
  EagerOps ops;
  std::vector<double> dts(x.rank() == 2 ? x.rows() : 1, dt);
  return tl_step_ops(ops, f, std::span<const Tensor>{}, mid, std::span<const Tensor>{}, x, dts, p,
                     nfe);
}

Trajectory integrate(const VectorField& f, const IntegrateAux& aux, const Tensor& x0, double t0,
                     double t_end, const IntegratorConfig& cfg) {
  if (!(t_end > t0)) throw ConfigError("integrate: end time must exceed start time");
  if (cfg.scheme == Scheme::Dopri5) return dopri5_adaptive(f, x0, t0, t_end, cfg.rtol, cfg.atol);
  if (cfg.steps < 1) throw ConfigError("integrate: steps must be >= 1");
  if (cfg.order < 1) throw ConfigError("integrate: order must be >= 1");
  if (cfg.scheme == Scheme::TaylorLagrange && aux.midpoint == nullptr)
    throw ConfigError("integrate: the tl scheme needs a midpoint model");
  if (cfg.scheme == Scheme::HyperEuler && aux.residual == nullptr)
    throw ConfigError("integrate: the hypereuler scheme needs a residual net");

  EagerOps ops;
  const std::span<const Tensor> none{};
  const std::size_t rows = x0.rank() == 2 ? x0.rows() : 1;
  const double dt = (t_end - t0) / static_cast<double>(cfg.steps);
  const std::vector<double> dts(rows, dt);
  const MidpointModel truncated = degenerate_midpoint();

  Trajectory traj;
  traj.times.push_back(t0);
  traj.states.push_back(x0);
  Tensor x = x0;
  for (int i = 1; i <= cfg.steps; ++i) {
    switch (cfg.scheme) {
      case Scheme::TaylorLagrange:
        x = tl_step_ops(ops, f, none, *aux.midpoint, none, x, dts, cfg.order, &traj.field_evals);
        break;
      case Scheme::TruncatedTaylor:
        x = tl_step_ops(ops, f, none, truncated, none, x, dts, cfg.order, &traj.field_evals);
        break;
      case Scheme::Euler:
        x = euler_step_ops(ops, f, none, x, dts, &traj.field_evals);
        break;
      case Scheme::Rk4:
        x = rk4_step_ops(ops, f, none, x, dts, &traj.field_evals);
        break;
      case Scheme::HyperEuler:
        x = hypereuler_step_ops(ops, f, none, *aux.residual, none, x, dts, &traj.field_evals);
        break;
      case Scheme::Dopri5: break;  // handled above
    }
    require_finite(x, "integrate: state");
    const double t = i == cfg.steps ? t_end : t0 + dt * static_cast<double>(i);
    traj.times.push_back(t);
    traj.states.push_back(x);
  }
  return traj;
}

Trajectory dopri5_adaptive(const VectorField& f, const Tensor& x0, double t0, double t_end,
                           double rtol, double atol) {
  EagerOps ops;
  auto res = dopri5_ops(ops, f, std::span<const Tensor>{}, x0, t0, t_end, rtol, atol);
  Trajectory traj;
  traj.times = std::move(res.times);
  traj.states = std::move(res.states);
  traj.field_evals = res.field_evals;
  return traj;
}

}  // namespace tlode
