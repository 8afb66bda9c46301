#include "tlode/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_set>
#include <utility>

#include "tlode/csv.hpp"
#include "tlode/error.hpp"
#include "tlode/integrators.hpp"
#include "tlode/optim.hpp"
#include "tlode/ops.hpp"
#include "tlode/tape.hpp"

namespace tlode {

std::size_t Dataset::state_dim() const {
  return records.empty() ? 0 : records.front().x0.data.size();
}

void validate_dataset(const Dataset& d) {
  if (d.empty()) throw ConfigError("dataset: no records");
  const std::size_t n = d.state_dim();
  for (std::size_t j = 0; j < d.records.size(); ++j) {
    const DataRecord& r = d.records[j];
    if (r.x0.rank() != 1 || r.y.rank() != 1)
      throw ConfigError("dataset: record " + std::to_string(j) + " states must be rank-1");
    if (r.x0.data.size() != n || r.y.data.size() != n)
      throw ConfigError("dataset: record " + std::to_string(j) + " has dimension " +
                        std::to_string(r.x0.data.size()) + " / " + std::to_string(r.y.data.size()) +
                        ", expected " + std::to_string(n));
    if (!(r.t_end > r.t0))
      throw ConfigError("dataset: record " + std::to_string(j) + " needs t_end > t0 (got t0=" +
                        std::to_string(r.t0) + ", t_end=" + std::to_string(r.t_end) + ")");
  }
}

void validate_training_config(const TrainingConfig& cfg) {
  if (cfg.n_rounds < 1) throw ConfigError("training: n_rounds must be >= 1");
  if (cfg.n_dynamics < 0 || cfg.n_midpoint < 0)
    throw ConfigError("training: per-round step counts must be >= 0");
  if (cfg.n_distill < 1) throw ConfigError("training: n_distill must be >= 1");
  if (cfg.lambda < 0) throw ConfigError("training: lambda must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
  if (!(cfg.lr_dynamics > 0) || !(cfg.lr_midpoint > 0))
    throw ConfigError("training: learning rates must be > 0");
  if (cfg.decay < 0) throw ConfigError("training: decay must be >= 0");
  if (cfg.order < 1 || cfg.order > 3)
    throw ConfigError("training: trainable expansion order is 1..3 (got " +
                      std::to_string(cfg.order) + ")");
  if (cfg.h_steps < 1) throw ConfigError("training: h_steps must be >= 1");
  if (cfg.scheme == Scheme::Dopri5)
    throw ConfigError("training: adaptive dopri5 is not a trainable scheme");
  const bool series = cfg.scheme == Scheme::TaylorLagrange || cfg.scheme == Scheme::TruncatedTaylor;
  if (cfg.lambda > 0 && !series)
    throw ConfigError("training: the remainder penalty needs a series scheme (tl or truncated)");
  if (cfg.n_midpoint > 0 && cfg.scheme != Scheme::TaylorLagrange &&
      cfg.scheme != Scheme::HyperEuler)
    throw ConfigError("training: corrector steps need the tl or hypereuler scheme");
  if (!(cfg.held_out_fraction >= 0.0) || cfg.held_out_fraction >= 1.0)
    throw ConfigError("training: held_out_fraction must be in [0, 1)");
}

namespace {

// Stacks selected records into [B x n] inputs/labels and per-row step sizes.
struct BatchTensors {
  Tensor x0;
  Tensor y;
  std::vector<double> dts;
};

BatchTensors stack_batch(const Dataset& data, std::span<const std::size_t> idx, int h_steps) {
  const std::size_t b = idx.size();
  const std::size_t n = data.state_dim();
  Tensor x0 = Tensor::zeros({b, n});
  Tensor y = Tensor::zeros({b, n});
  std::vector<double> dts(b);
  for (std::size_t r = 0; r < b; ++r) {
    const DataRecord& rec = data.records[idx[r]];
    for (std::size_t c = 0; c < n; ++c) {
      x0.data[r * n + c] = rec.x0.data[c];
      y.data[r * n + c] = rec.y.data[c];
    }
    dts[r] = (rec.t_end - rec.t0) / static_cast<double>(h_steps);
  }
  return {std::move(x0), std::move(y), std::move(dts)};
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

// Shared builder for both losses. Exactly one component is live: its
// parameters are registered on the tape, the other is lifted as constants, so
// the frozen half contributes no gradient entries at all.
LossResult tl_batch_loss(const VectorField& field, const MidpointModel& mid, const Dataset& batch,
                         std::span<const std::size_t> idx, double lambda, int order, int h_steps,
                         bool train_field, const char* who,
                         Scheme scheme = Scheme::TaylorLagrange) {
  if (idx.empty()) throw ConfigError(std::string(who) + ": batch is empty");
  BatchTensors bt = stack_batch(batch, idx, h_steps);

  Tape tape;
  TapeOps ops{&tape};

  std::vector<Var> field_params;
  std::vector<Var> mid_params;
  if (train_field) {
    if (const auto* m = std::get_if<MlpField>(&field)) {
      auto labels = m->net.param_labels("dynamics");
      for (std::size_t i = 0; i < m->net.params.size(); ++i)
        field_params.push_back(tape.param(m->net.params[i], labels[i]));
    }
  } else {
    if (const Mlp* net = midpoint_net(mid)) {
      auto labels = net->param_labels(scheme == Scheme::HyperEuler ? "residual" : "midpoint");
      for (std::size_t i = 0; i < net->params.size(); ++i)
        mid_params.push_back(tape.param(net->params[i], labels[i]));
    }
  }

  const MidpointModel truncated = degenerate_midpoint();
  Var x = tape.constant(bt.x0);
  std::uint64_t nfe = 0;
  std::vector<Var> remainders;
  remainders.reserve(static_cast<std::size_t>(h_steps));
  for (int s = 0; s < h_steps; ++s) {
    Var rem;
    switch (scheme) {
      case Scheme::TaylorLagrange:
        x = tl_step_ops(ops, field, std::span<const Var>(field_params), mid,
                        std::span<const Var>(mid_params), x, bt.dts, order, &nfe, &rem);
        remainders.push_back(rem);
        break;
      case Scheme::TruncatedTaylor:
        x = tl_step_ops(ops, field, std::span<const Var>(field_params), truncated,
                        std::span<const Var>(), x, bt.dts, order, &nfe, &rem);
        remainders.push_back(rem);
        break;
      case Scheme::Euler:
        x = euler_step_ops(ops, field, std::span<const Var>(field_params), x, bt.dts, &nfe);
        break;
      case Scheme::Rk4:
        x = rk4_step_ops(ops, field, std::span<const Var>(field_params), x, bt.dts, &nfe);
        break;
      case Scheme::HyperEuler:
        x = hypereuler_step_ops(ops, field, std::span<const Var>(field_params),
                                *midpoint_net(mid), std::span<const Var>(mid_params), x, bt.dts,
                                &nfe);
        break;
      case Scheme::Dopri5:
        throw ConfigError(std::string(who) + ": dopri5 is not a trainable scheme");
    }
  }

  Var residual = tape.sub(x, tape.constant(bt.y));
  Var objective = tape.sum(tape.mul(residual, residual));
  const double prediction_term = tape.value(objective).data[0];

  double remainder_term = 0.0;
  if (train_field && lambda != 0.0) {
    Var penalty = tape.sum(tape.mul(remainders[0], remainders[0]));
    for (std::size_t s = 1; s < remainders.size(); ++s)
      penalty = tape.add(penalty, tape.sum(tape.mul(remainders[s], remainders[s])));
    remainder_term = tape.value(penalty).data[0];
    objective = tape.add(objective, tape.scale(penalty, lambda));
  } else {
    for (const Var& r : remainders) remainder_term += sum_squares(tape.value(r));
  }

  const double loss = tape.value(objective).data[0];
  if (!std::isfinite(loss)) {
    // Name the row that blew up: check final predictions, then remainders.
    const std::size_t b = idx.size();
    const std::size_t n = batch.state_dim();
    std::size_t bad = 0;
    bool found = false;
    const Tensor& pred = tape.value(x);
    for (std::size_t r = 0; r < b && !found; ++r)
      for (std::size_t c = 0; c < n; ++c)
        if (!std::isfinite(pred.data[r * n + c])) {
          bad = r;
          found = true;
          break;
        }
    for (std::size_t s = 0; s < remainders.size() && !found; ++s) {
      const Tensor& rv = tape.value(remainders[s]);
      for (std::size_t r = 0; r < b && !found; ++r)
        for (std::size_t c = 0; c < n; ++c)
          if (!std::isfinite(rv.data[r * n + c])) {
            bad = r;
            found = true;
            break;
          }
    }
    throw NumericalError(std::string(who) + ": non-finite loss at record " + std::to_string(bad) +
                         " of the batch");
  }

  tape.backward(objective);

  LossResult out;
  out.loss = loss;
  out.prediction_term = prediction_term;
  out.remainder_term = remainder_term;
  out.grads = tape.param_grads();
  out.grad_names = tape.param_names();
  out.nfe = nfe * idx.size();
  return out;
}

}  // namespace

LossResult dynamics_loss(const VectorField& field, const MidpointModel& mid, const Dataset& batch,
                         double lambda, int order, int h_steps) {
  if (lambda < 0) throw ConfigError("dynamics_loss: lambda must be >= 0");
  if (order < 1 || order > 3) throw ConfigError("dynamics_loss: trainable order is 1..3");
  if (h_steps < 1) throw ConfigError("dynamics_loss: h_steps must be >= 1");
  validate_dataset(batch);
  auto idx = all_indices(batch.size());
  return tl_batch_loss(field, mid, batch, idx, lambda, order, h_steps, true, "dynamics_loss");
}

LossResult midpoint_loss(const VectorField& field, const MidpointModel& mid, const Dataset& batch,
                         int order, int h_steps) {
  if (order < 1 || order > 3) throw ConfigError("midpoint_loss: trainable order is 1..3");
  if (h_steps < 1) throw ConfigError("midpoint_loss: h_steps must be >= 1");
  validate_dataset(batch);
  auto idx = all_indices(batch.size());
  return tl_batch_loss(field, mid, batch, idx, 0.0, order, h_steps, false, "midpoint_loss");
}

DistillResult distill_dataset(const VectorField& field, const Dataset& source, int n, Rng& rng) {
  if (n < 1) throw ConfigError("distill_dataset: n must be >= 1");
  validate_dataset(source);
  DistillResult out;
  out.data.records.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const DataRecord& src = source.records[rng.index(source.size())];
    try {
      Trajectory traj = dopri5_adaptive(field, src.x0, src.t0, src.t_end, 1.4e-12, 1.4e-12);
      out.data.records.push_back({src.x0, src.t0, src.t_end, traj.final_state()});
    } catch (const NumericalError&) {
      ++out.skipped;
    }
  }
  return out;
}

double prediction_mse(const VectorField& field, const MidpointModel& mid, const Dataset& data,
                      int order, int h_steps, Scheme scheme) {
  if (data.empty()) return std::nan("");
  auto idx = all_indices(data.size());
  BatchTensors bt = stack_batch(data, idx, h_steps);
  EagerOps ops;
  const std::span<const Tensor> none{};
  const MidpointModel truncated = degenerate_midpoint();
  Tensor x = bt.x0;
  for (int s = 0; s < h_steps; ++s) {
    switch (scheme) {
      case Scheme::TaylorLagrange:
        x = tl_step_ops(ops, field, none, mid, none, x, bt.dts, order);
        break;
      case Scheme::TruncatedTaylor:
        x = tl_step_ops(ops, field, none, truncated, none, x, bt.dts, order);
        break;
      case Scheme::Euler:
        x = euler_step_ops(ops, field, none, x, bt.dts);
        break;
      case Scheme::Rk4:
        x = rk4_step_ops(ops, field, none, x, bt.dts);
        break;
      case Scheme::HyperEuler:
        x = hypereuler_step_ops(ops, field, none, *midpoint_net(mid), none, x, bt.dts);
        break;
      case Scheme::Dopri5:
        throw ConfigError("prediction_mse: dopri5 is not a fixed-step scheme");
    }
  }
  Tensor r = sub(x, bt.y);
  return sum_squares(r) / static_cast<double>(r.data.size());
}

void write_training_log_csv(const TrainingLog& log, const std::string& path) {
  CsvWriter w(path, {"step", "round", "phase", "loss", "held_out_mse", "remainder", "nfe"});
  for (const TrainingLogRow& r : log.rows)
    w.row({CsvWriter::num(r.step), CsvWriter::num(r.round), r.phase, CsvWriter::num(r.loss),
           CsvWriter::num(r.held_out_mse), CsvWriter::num(r.remainder), CsvWriter::num(r.nfe)});
  w.close();
}

void write_training_timing_csv(const TrainingLog& log, const std::string& path) {
  CsvWriter w(path, {"step", "wall_ns"});
  for (const TrainingLogRow& r : log.rows)
    w.row({CsvWriter::num(r.step), CsvWriter::num(static_cast<std::uint64_t>(r.wall_ns))});
  w.close();
}

namespace {

// k distinct indices out of n (draw order preserved); k >= n degenerates to
// the identity selection.
std::vector<std::size_t> draw_batch(Rng& rng, std::size_t n, std::size_t k) {
  if (k >= n) return all_indices(n);
  std::vector<std::size_t> out;
  out.reserve(k);
  std::unordered_set<std::size_t> seen;
  for (std::size_t j = n - k; j < n; ++j) {
    std::size_t t = rng.index(j + 1);
    if (seen.insert(t).second)
      out.push_back(t);
    else {
      seen.insert(j);
      out.push_back(j);
    }
  }
  return out;
}

}  // namespace

TrainResult train(const TrainingConfig& cfg, const Dataset& data, const VectorField& field_init,
                  const MidpointModel& midpoint_init) {
  validate_training_config(cfg);
  validate_dataset(data);
  const std::size_t n = data.state_dim();
  validate_field(field_init);
  if (state_dim(field_init) != n)
    throw ConfigError("train: field dimension " + std::to_string(state_dim(field_init)) +
                      " does not match dataset dimension " + std::to_string(n));
  if (cfg.scheme == Scheme::HyperEuler) {
    const Mlp* net = midpoint_net(midpoint_init);
    if (cfg.n_midpoint > 0 &&
        (net == nullptr || net->input_dim() != n + 1 || net->output_dim() != n))
      throw ConfigError("train: the hypereuler residual net must map (state, dt) -> state, " +
                        std::to_string(n + 1) + " -> " + std::to_string(n));
  } else {
    validate_midpoint(midpoint_init, n);
  }

  const bool field_trainable = std::holds_alternative<MlpField>(field_init);
  if (cfg.n_dynamics > 0 && !field_trainable)
    throw ConfigError("train: n_dynamics > 0 but the dynamics field has no trainable parameters");
  if (cfg.n_midpoint > 0 && midpoint_net(midpoint_init) == nullptr)
    throw ConfigError("train: n_midpoint > 0 but the midpoint model has no trainable parameters");

  TrainResult res;
  res.field = field_init;
  res.midpoint = midpoint_init;

  Rng root(cfg.seed);
  Rng shuffle_rng = root.split();
  Rng batch_rng = root.split();
  Rng distill_rng = root.split();

  // Seed-deterministic held-out split.
  std::vector<std::size_t> perm = all_indices(data.size());
  for (std::size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[shuffle_rng.index(i)]);
  const std::size_t held =
      static_cast<std::size_t>(cfg.held_out_fraction * static_cast<double>(perm.size()));
  Dataset train_set;
  for (std::size_t i = 0; i < perm.size(); ++i)
    (i < held ? res.held_out : train_set).records.push_back(data.records[perm[i]]);
  if (train_set.empty()) throw ConfigError("train: held-out split left no training records");

  AdamConfig dyn_cfg;
  dyn_cfg.lr0 = cfg.lr_dynamics;
  dyn_cfg.decay = cfg.decay;
  AdamConfig mid_cfg;
  mid_cfg.lr0 = cfg.lr_midpoint;
  mid_cfg.decay = cfg.decay;
  AdamState dyn_state, mid_state;

  std::uint64_t step = 0;
  const auto held_mse = [&]() {
    return prediction_mse(res.field, res.midpoint, res.held_out, cfg.order, cfg.h_steps,
                          cfg.scheme);
  };

  for (int round = 1; round <= cfg.n_rounds && !res.aborted; ++round) {
    // Phase 1: dynamics steps, midpoint frozen.
    for (int k = 0; k < cfg.n_dynamics && !res.aborted; ++k) {
      auto idx = draw_batch(batch_rng, train_set.size(), static_cast<std::size_t>(cfg.batch_size));
      const auto t_start = std::chrono::steady_clock::now();
      try {
        LossResult lr = tl_batch_loss(res.field, res.midpoint, train_set, idx, cfg.lambda,
                                      cfg.order, cfg.h_steps, true, "dynamics_loss", cfg.scheme);
        adam_step(std::get<MlpField>(res.field).net.params, lr.grads, dyn_state, dyn_cfg,
                  lr.grad_names);
        const auto t_end = std::chrono::steady_clock::now();
        ++step;
        res.log.rows.push_back(
            {step, round, "dynamics", lr.loss, held_mse(), lr.remainder_term, lr.nfe,
             static_cast<std::int64_t>(
                 std::chrono::duration_cast<std::chrono::nanoseconds>(t_end - t_start).count())});
      } catch (const NumericalError& e) {
        res.aborted = true;
        res.abort_message = e.what();
      }
    }
    if (res.aborted || cfg.n_midpoint == 0) continue;

    // Phase 2: distill labels under the frozen dynamics, then midpoint steps.
    DistillResult distilled;
    try {
      distilled = distill_dataset(res.field, train_set, cfg.n_distill, distill_rng);
    } catch (const NumericalError& e) {
      res.aborted = true;
      res.abort_message = e.what();
      break;
    }
    res.log.distill_skipped += distilled.skipped;
    if (distilled.skipped > 0)
      std::fprintf(stderr, "warning: distillation round %d skipped %d of %d reference solves\n",
                   round, distilled.skipped, cfg.n_distill);
    if (distilled.data.empty()) {
      res.aborted = true;
      res.abort_message = "train: distillation produced no labels (every reference solve failed)";
      break;
    }

    for (int k = 0; k < cfg.n_midpoint && !res.aborted; ++k) {
      auto idx =
          draw_batch(batch_rng, distilled.data.size(), static_cast<std::size_t>(cfg.batch_size));
      const auto t_start = std::chrono::steady_clock::now();
      try {
        LossResult lr = tl_batch_loss(res.field, res.midpoint, distilled.data, idx, 0.0,
                                      cfg.order, cfg.h_steps, false, "midpoint_loss", cfg.scheme);
        adam_step(midpoint_net(res.midpoint)->params, lr.grads, mid_state, mid_cfg,
                  lr.grad_names);
        const auto t_end = std::chrono::steady_clock::now();
        ++step;
        res.log.rows.push_back(
            {step, round, "midpoint", lr.loss, held_mse(), lr.remainder_term, lr.nfe,
             static_cast<std::int64_t>(
                 std::chrono::duration_cast<std::chrono::nanoseconds>(t_end - t_start).count())});
      } catch (const NumericalError& e) {
        res.aborted = true;
        res.abort_message = e.what();
      }
    }
  }
  return res;
}

}  // namespace tlode
