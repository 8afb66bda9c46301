#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tlode/dynamics.hpp"
#include "tlode/integrators.hpp"
#include "tlode/midpoint.hpp"
#include "tlode/rng.hpp"
#include "tlode/training.hpp"

namespace tlode {

// ---- experiment configuration (parsed from a single JSON document) ----

struct DatasetSpec {
  int trajectories = 100;
  double horizon = 10.0;
  std::vector<double> dts = {0.05};  // one-step pair spacing(s)
  double box = 0.5;                  // initial states uniform in [-box, box]^n
};

struct TrainSpec {
  TrainingConfig cfg;
  GainShape gain_shape = GainShape::Full;
  int hidden = 16;           // corrector net hidden width
  bool zero_init_last = true;
  int dynamics_hidden = 64;  // dynamics net hidden width (learn-stiff)
  DatasetSpec dataset;
};

struct IntegrateSpec {
  std::vector<Scheme> schemes = {Scheme::TaylorLagrange, Scheme::TruncatedTaylor, Scheme::Euler,
                                 Scheme::Rk4, Scheme::Dopri5};
  std::vector<double> spans = {0.05, 0.1, 0.2, 0.3};
  int states = 250;
  double box = 0.5;
  int order = 2;  // series order for schemes run without a model
  int steps = 1;  // sub-steps H per span
  double rtol = 1.4e-12;
  double atol = 1.4e-12;
  std::string model;   // checkpoint path (required by tl / hypereuler)
  int timing_reps = 5; // wall-clock: median of this many runs after 1 warm-up
};

// Convergence and enclosure-audit settings live inside the "integrator"
// config section (they parameterize how steps are driven); states/box are
// shared with IntegrateSpec.
struct ConvergenceEntry {
  Scheme scheme = Scheme::TruncatedTaylor;
  int order = 1;
  std::string midpoint = "analytic";  // tl only: analytic | degenerate
};

struct ConvergenceSpec {
  std::vector<ConvergenceEntry> entries = {{Scheme::TruncatedTaylor, 1, "analytic"},
                                           {Scheme::Rk4, 1, "analytic"},
                                           {Scheme::TaylorLagrange, 1, "analytic"}};
  double dt_min = 1e-5;
  double dt_max = 1e-4;
  int points = 9;
};

struct EnclosureSpec {
  int samples = 1000;
  double dt_lo = 0.05;  // step sampled in [dt_lo, dt_hi] x the admissible cap
  double dt_hi = 0.95;
  int lipschitz_samples = 4096;
};

struct OutputSpec {
  std::string dir = "out";
  std::string model = "model.tlmodel.json";
  std::string log = "train_log.csv";
  std::string timing = "train_timing.csv";
  std::string csv = "results.csv";
};

struct ExperimentConfig {
  std::string experiment;  // known-stiff | learn-stiff | convergence | enclosure-audit
  VectorField system;
  std::string system_name = "stiff";
  TrainSpec training;
  IntegrateSpec integrate;
  ConvergenceSpec convergence;
  EnclosureSpec enclosure;
  OutputSpec output;
  std::uint64_t seed = 0;
};

// Strict parse: unknown keys anywhere are rejected with ConfigError.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

// ---- shared helpers ----

// min(1, ||xhat - ref||_2 / ||ref||_2); a zero reference scores 0 only on an
// exact match.
double normalized_error(const Tensor& xhat, const Tensor& ref);

// Reference endpoint: analytic for linear fields, adaptive 1.4e-12 otherwise.
Tensor reference_solution(const VectorField& f, const Tensor& x0, double span);

// One-step pairs along `trajectories` seeded trajectories, one slicing per dt
// in the spec.
Dataset build_trajectory_dataset(const VectorField& f, const DatasetSpec& spec, Rng& rng);

// Worker cap for state fan-out: TLODE_THREADS (unset/0 = hardware), clamped
// to the job count.
int worker_count(std::size_t jobs);

// ---- experiment runners (used by the CLI subcommands) ----

struct TrainRunResult {
  TrainResult result;
  std::string model_path;
  std::string log_path;
  std::string timing_path;
};
TrainRunResult run_train_experiment(const ExperimentConfig& cfg);

struct IntegrateRunResult {
  std::string csv_path;
  std::size_t rows = 0;
};
IntegrateRunResult run_integrate_experiment(const ExperimentConfig& cfg);

struct ConvergenceRunResult {
  std::string csv_path;
  // one entry per scheme row group: fitted slope rendered as written to the
  // CSV (a number, or "exact" at the float64 floor)
  std::vector<std::pair<std::string, std::string>> slopes;
};
ConvergenceRunResult run_convergence_experiment(const ExperimentConfig& cfg);

struct EnclosureRunResult {
  std::string csv_path;
  int samples = 0;
  int violations = 0;
};
EnclosureRunResult run_enclosure_audit(const ExperimentConfig& cfg);

}  // namespace tlode
