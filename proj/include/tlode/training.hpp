#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tlode/dynamics.hpp"
#include "tlode/integrators.hpp"
#include "tlode/midpoint.hpp"
#include "tlode/rng.hpp"
#include "tlode/tensor.hpp"

namespace tlode {

// One supervised pair: integrate from x0 over [t0, t_end] and hit y.
struct DataRecord {
  Tensor x0;
  double t0 = 0.0;
  double t_end = 0.0;
  Tensor y;
};

struct Dataset {
  std::vector<DataRecord> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  std::size_t state_dim() const;
};

// Throws ConfigError unless every record has t_end > t0 and all states (and
// labels) share one dimension.
void validate_dataset(const Dataset& d);

struct TrainingConfig {
  // Step scheme the losses differentiate through. TaylorLagrange trains the
  // midpoint net in the corrector phase; HyperEuler reuses that slot for its
  // Euler-residual net g(x, dt). Truncated/Euler/Rk4 have no trainable
  // corrector (dynamics-only baselines). Dopri5 is not trainable.
  Scheme scheme = Scheme::TaylorLagrange;
  int n_rounds = 1;         // outer alternations
  int n_dynamics = 0;       // optimizer steps on the dynamics net per round
  int n_midpoint = 0;       // optimizer steps on the midpoint net per round
  int n_distill = 1024;     // labeled samples drawn per round for midpoint fitting
  double lambda = 0.0;      // remainder-penalty weight in the dynamics loss
  int batch_size = 512;
  double lr_dynamics = 1e-3;
  double lr_midpoint = 1e-3;
  double decay = 0.0;       // per-step exponential learning-rate decay
  int order = 1;            // expansion order p (trainable range 1..3)
  int h_steps = 1;          // steps per record: dt = (t_end - t0) / h_steps
  double held_out_fraction = 0.1;
  std::uint64_t seed = 0;
};

// Throws ConfigError on out-of-range fields.
void validate_training_config(const TrainingConfig& cfg);

// Loss value plus gradients for whichever component was live.
struct LossResult {
  double loss = 0.0;
  double prediction_term = 0.0;  // sum over the batch of squared 2-norm residuals
  double remainder_term = 0.0;   // sum over batch and steps of squared remainder norms
  std::vector<Tensor> grads;     // aligned with the live net's params
  std::vector<std::string> grad_names;
  std::uint64_t nfe = 0;  // per-sample field evaluations in the forward pass
};

// Prediction loss plus lambda times the remainder penalty, differentiated
// through every step (jets included) with respect to the dynamics parameters;
// the midpoint net is held fixed. Throws NumericalError naming the offending
// batch record if the loss is non-finite.
LossResult dynamics_loss(const VectorField& field, const MidpointModel& mid, const Dataset& batch,
                         double lambda, int order, int h_steps);

// Squared-error of the step endpoint against (distilled) labels,
//differentiated with respect to the midpoint parameters only; the dynamics
// are held fixed.
LossResult midpoint_loss(const VectorField& field, const MidpointModel& mid, const Dataset& batch,
                         int order, int h_steps);

struct DistillResult {
  Dataset data;
  int skipped = 0;  // records dropped because the reference solve failed
};

// Draws n samples (with replacement) from source and labels them by a
// high-accuracy adaptive solve of `field` (rtol = atol = 1.4e-12).
DistillResult distill_dataset(const VectorField& field, const Dataset& source, int n,
                              Rng& rng);

// Mean over records and components of the squared endpoint residual.
// Empty data yields NaN.
double prediction_mse(const VectorField& field, const MidpointModel& mid, const Dataset& data,
                      int order, int h_steps, Scheme scheme = Scheme::TaylorLagrange);

struct TrainingLogRow {
  std::uint64_t step = 0;  // monotone across phases and rounds
  int round = 0;
  std::string phase;  // "dynamics" or "midpoint"
  double loss = 0.0;
  double held_out_mse = 0.0;
  double remainder = 0.0;
  std::uint64_t nfe = 0;
  std::int64_t wall_ns = 0;
};

struct TrainingLog {
  std::vector<TrainingLogRow> rows;
  int distill_skipped = 0;
};

// Deterministic columns only (timing is separate so fixed seeds reproduce
// this file byte for byte).
void write_training_log_csv(const TrainingLog& log, const std::string& path);
void write_training_timing_csv(const TrainingLog& log, const std::string& path);

struct TrainResult {
  VectorField field;
  MidpointModel midpoint;
  TrainingLog log;
  Dataset held_out;
  bool aborted = false;
  std::string abort_message;
};

// Alternating optimization: per round, n_dynamics Adam steps on the dynamics
// loss with the midpoint frozen, then a fresh distilled set and n_midpoint
// Adam steps on the midpoint loss with the dynamics frozen. A non-finite loss
// or gradient stops training and returns the last good parameters.
TrainResult train(const TrainingConfig& cfg, const Dataset& data, const VectorField& field_init,
                  const MidpointModel& midpoint_init);

}  // namespace tlode
