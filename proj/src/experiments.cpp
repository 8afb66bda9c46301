#include "tlode/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "tlode/csv.hpp"
#include "tlode/enclosure.hpp"
#include "tlode/error.hpp"
#include "tlode/model_io.hpp"

namespace tlode {
namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& msg) { throw ConfigError("config: " + msg); }

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed) known = known || item.key() == k;
    if (!known) bad("unknown key '" + item.key() + "' in " + where);
  }
}

const json* find_obj(const json& j, const char* key, const char* where) {
  auto it = j.find(key);
  if (it == j.end()) return nullptr;
  if (!it->is_object()) bad(std::string("'") + key + "' in " + where + " must be an object");
  return &*it;
}

double get_num(const json& j, const char* key, double fallback, const char* where) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number()) bad(std::string("'") + key + "' in " + where + " must be a number");
  return it->get<double>();
}

int get_int(const json& j, const char* key, int fallback, const char* where) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number_integer()) bad(std::string("'") + key + "' in " + where + " must be an integer");
  return it->get<int>();
}

bool get_bool(const json& j, const char* key, bool fallback, const char* where) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_boolean()) bad(std::string("'") + key + "' in " + where + " must be a boolean");
  return it->get<bool>();
}

std::string get_str(const json& j, const char* key, const std::string& fallback, const char* where) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_string()) bad(std::string("'") + key + "' in " + where + " must be a string");
  return it->get<std::string>();
}

std::string require_str(const json& j, const char* key, const char* where) {
  auto it = j.find(key);
  if (it == j.end()) bad(std::string("missing required key '") + key + "' in " + where);
  if (!it->is_string()) bad(std::string("'") + key + "' in " + where + " must be a string");
  return it->get<std::string>();
}

Tensor parse_matrix(const json& j, const char* name) {
  if (!j.is_array() || j.empty()) bad(std::string("'") + name + "' must be a non-empty array of rows");
  const std::size_t rows = j.size();
  std::size_t cols = 0;
  std::vector<double> flat;
  for (std::size_t r = 0; r < rows; ++r) {
    const json& row = j[r];
    if (!row.is_array() || row.empty())
      bad(std::string("'") + name + "' rows must be non-empty arrays of numbers");
    if (r == 0) cols = row.size();
    if (row.size() != cols) bad(std::string("'") + name + "' rows must all have the same length");
    for (const json& v : row) {
      if (!v.is_number()) bad(std::string("'") + name + "' entries must be numbers");
      flat.push_back(v.get<double>());
    }
  }
  return Tensor::matrix(rows, cols, std::move(flat));
}

Tensor parse_vector(const json& j, const char* name) {
  if (!j.is_array() || j.empty()) bad(std::string("'") + name + "' must be a non-empty array of numbers");
  std::vector<double> flat;
  for (const json& v : j) {
    if (!v.is_number()) bad(std::string("'") + name + "' entries must be numbers");
    flat.push_back(v.get<double>());
  }
  return Tensor::vec(std::move(flat));
}

std::pair<VectorField, std::string> parse_system(const json* js) {
  if (!js) return {VectorField(make_stiff_system()), "stiff"};
  const std::string type = require_str(*js, "type", "system");
  if (type == "stiff") {
    check_keys(*js, "system", {"type", "lambda_slow", "lambda_fast", "rotated", "angle"});
    StiffSystemConfig c;
    c.lambda_slow = get_num(*js, "lambda_slow", c.lambda_slow, "system");
    c.lambda_fast = get_num(*js, "lambda_fast", c.lambda_fast, "system");
    c.rotated = get_bool(*js, "rotated", c.rotated, "system");
    c.angle = get_num(*js, "angle", c.angle, "system");
    return {VectorField(make_stiff_system(c)), "stiff"};
  }
  if (type == "linear") {
    check_keys(*js, "system", {"type", "matrix"});
    auto it = js->find("matrix");
    if (it == js->end()) bad("system type 'linear' needs a 'matrix' key");
    Tensor a = parse_matrix(*it, "matrix");
    if (a.rows() != a.cols()) bad("'matrix' must be square");
    return {VectorField(LinearField{std::move(a)}), "linear"};
  }
  if (type == "pendulum") {
    check_keys(*js, "system", {"type", "g_over_l"});
    PendulumField p;
    p.g_over_l = get_num(*js, "g_over_l", p.g_over_l, "system");
    return {VectorField(p), "pendulum"};
  }
  if (type == "quadratic") {
    check_keys(*js, "system", {"type", "b", "c", "d"});
    QuadraticField q;
    auto grab = [&](const char* key) -> const json& {
      auto it = js->find(key);
      if (it == js->end()) bad(std::string("system type 'quadratic' needs a '") + key + "' key");
      return *it;
    };
    q.b_matrix = parse_matrix(grab("b"), "b");
    q.c_matrix = parse_matrix(grab("c"), "c");
    q.d = parse_vector(grab("d"), "d");
    return {VectorField(std::move(q)), "quadratic"};
  }
  bad("unknown system type '" + type + "' (expected stiff, linear, pendulum, or quadratic)");
}

std::vector<double> parse_dt_list(const json& j, const char* where) {
  std::vector<double> dts;
  if (j.is_number()) {
    dts.push_back(j.get<double>());
  } else if (j.is_array() && !j.empty()) {
    for (const json& v : j) {
      if (!v.is_number()) bad(std::string("'dt' entries in ") + where + " must be numbers");
      dts.push_back(v.get<double>());
    }
  } else {
    bad(std::string("'dt' in ") + where + " must be a number or a non-empty array of numbers");
  }
  for (double dt : dts)
    if (!(dt > 0.0)) bad(std::string("'dt' values in ") + where + " must be positive");
  return dts;
}

TrainSpec parse_training(const json* jt) {
  TrainSpec ts;
  if (!jt) return ts;
  check_keys(*jt, "training",
             {"scheme", "rounds", "dynamics_steps", "midpoint_steps", "distill", "lambda",
              "batch_size", "lr_dynamics", "lr_midpoint", "decay", "order", "h_steps",
              "held_out_fraction", "gain_shape", "hidden", "zero_init_last", "dynamics_hidden",
              "dataset"});
  if (jt->contains("scheme")) ts.cfg.scheme = scheme_from_name(require_str(*jt, "scheme", "training"));
  ts.cfg.n_rounds = get_int(*jt, "rounds", ts.cfg.n_rounds, "training");
  ts.cfg.n_dynamics = get_int(*jt, "dynamics_steps", ts.cfg.n_dynamics, "training");
  ts.cfg.n_midpoint = get_int(*jt, "midpoint_steps", ts.cfg.n_midpoint, "training");
  ts.cfg.n_distill = get_int(*jt, "distill", ts.cfg.n_distill, "training");
  ts.cfg.lambda = get_num(*jt, "lambda", ts.cfg.lambda, "training");
  ts.cfg.batch_size = get_int(*jt, "batch_size", ts.cfg.batch_size, "training");
  ts.cfg.lr_dynamics = get_num(*jt, "lr_dynamics", ts.cfg.lr_dynamics, "training");
  ts.cfg.lr_midpoint = get_num(*jt, "lr_midpoint", ts.cfg.lr_midpoint, "training");
  ts.cfg.decay = get_num(*jt, "decay", ts.cfg.decay, "training");
  ts.cfg.order = get_int(*jt, "order", ts.cfg.order, "training");
  ts.cfg.h_steps = get_int(*jt, "h_steps", ts.cfg.h_steps, "training");
  ts.cfg.held_out_fraction = get_num(*jt, "held_out_fraction", ts.cfg.held_out_fraction, "training");
  if (jt->contains("gain_shape"))
    ts.gain_shape = gain_shape_from_name(require_str(*jt, "gain_shape", "training"));
  ts.hidden = get_int(*jt, "hidden", ts.hidden, "training");
  ts.zero_init_last = get_bool(*jt, "zero_init_last", ts.zero_init_last, "training");
  ts.dynamics_hidden = get_int(*jt, "dynamics_hidden", ts.dynamics_hidden, "training");
  if (ts.hidden < 1) bad("'hidden' in training must be >= 1");
  if (ts.dynamics_hidden < 1) bad("'dynamics_hidden' in training must be >= 1");
  if (const json* jd = find_obj(*jt, "dataset", "training")) {
    check_keys(*jd, "training.dataset", {"trajectories", "horizon", "dt", "box"});
    ts.dataset.trajectories = get_int(*jd, "trajectories", ts.dataset.trajectories, "training.dataset");
    ts.dataset.horizon = get_num(*jd, "horizon", ts.dataset.horizon, "training.dataset");
    ts.dataset.box = get_num(*jd, "box", ts.dataset.box, "training.dataset");
    if (jd->contains("dt")) ts.dataset.dts = parse_dt_list(jd->at("dt"), "training.dataset");
  }
  return ts;
}

std::vector<double> parse_span_list(const json& j, const char* where) {
  std::vector<double> spans;
  if (j.is_number()) {
    spans.push_back(j.get<double>());
  } else if (j.is_array() && !j.empty()) {
    for (const json& v : j) {
      if (!v.is_number()) bad(std::string("span entries in ") + where + " must be numbers");
      spans.push_back(v.get<double>());
    }
  } else {
    bad(std::string("spans in ") + where + " must be a number or a non-empty array of numbers");
  }
  for (double s : spans)
    if (!(s > 0.0)) bad(std::string("span values in ") + where + " must be positive");
  return spans;
}

void parse_integrator(const json* ji, IntegrateSpec& is, ConvergenceSpec& cs, EnclosureSpec& es) {
  if (!ji) return;
  check_keys(*ji, "integrator",
             {"scheme", "schemes", "span", "spans", "states", "box", "order", "steps", "rtol",
              "atol", "model", "timing_reps", "entries", "dt_min", "dt_max", "points", "samples",
              "dt_lo", "dt_hi", "lipschitz_samples"});
  if (ji->contains("scheme") && ji->contains("schemes"))
    bad("give either 'scheme' or 'schemes' in integrator, not both");
  if (ji->contains("scheme")) {
    is.schemes = {scheme_from_name(require_str(*ji, "scheme", "integrator"))};
  } else if (ji->contains("schemes")) {
    const json& arr = ji->at("schemes");
    if (!arr.is_array() || arr.empty()) bad("'schemes' in integrator must be a non-empty array");
    is.schemes.clear();
    for (const json& v : arr) {
      if (!v.is_string()) bad("'schemes' entries must be strings");
      is.schemes.push_back(scheme_from_name(v.get<std::string>()));
    }
  }
  if (ji->contains("span") && ji->contains("spans"))
    bad("give either 'span' or 'spans' in integrator, not both");
  if (ji->contains("span")) is.spans = parse_span_list(ji->at("span"), "integrator");
  if (ji->contains("spans")) is.spans = parse_span_list(ji->at("spans"), "integrator");
  is.states = get_int(*ji, "states", is.states, "integrator");
  is.box = get_num(*ji, "box", is.box, "integrator");
  is.order = get_int(*ji, "order", is.order, "integrator");
  is.steps = get_int(*ji, "steps", is.steps, "integrator");
  is.rtol = get_num(*ji, "rtol", is.rtol, "integrator");
  is.atol = get_num(*ji, "atol", is.atol, "integrator");
  is.model = get_str(*ji, "model", is.model, "integrator");
  is.timing_reps = get_int(*ji, "timing_reps", is.timing_reps, "integrator");
  if (is.states < 1) bad("'states' in integrator must be >= 1");
  if (is.order < 1) bad("'order' in integrator must be >= 1");
  if (is.steps < 1) bad("'steps' in integrator must be >= 1");
  if (is.timing_reps < 1) bad("'timing_reps' in integrator must be >= 1");
  if (!(is.box > 0.0)) bad("'box' in integrator must be positive");
  if (!(is.rtol > 0.0) || !(is.atol > 0.0)) bad("'rtol'/'atol' in integrator must be positive");

  if (ji->contains("entries")) {
    const json& arr = ji->at("entries");
    if (!arr.is_array() || arr.empty()) bad("'entries' in integrator must be a non-empty array");
    cs.entries.clear();
    for (const json& e : arr) {
      if (!e.is_object()) bad("'entries' elements must be objects");
      check_keys(e, "integrator.entries", {"scheme", "order", "midpoint"});
      ConvergenceEntry ce;
      ce.scheme = scheme_from_name(require_str(e, "scheme", "integrator.entries"));
      ce.order = get_int(e, "order", ce.order, "integrator.entries");
      ce.midpoint = get_str(e, "midpoint", ce.midpoint, "integrator.entries");
      if (ce.order < 1 || ce.order > 6) bad("entry 'order' must be in [1, 6]");
      if (ce.midpoint != "analytic" && ce.midpoint != "degenerate")
        bad("entry 'midpoint' must be 'analytic' or 'degenerate'");
      cs.entries.push_back(std::move(ce));
    }
  }
  cs.dt_min = get_num(*ji, "dt_min", cs.dt_min, "integrator");
  cs.dt_max = get_num(*ji, "dt_max", cs.dt_max, "integrator");
  cs.points = get_int(*ji, "points", cs.points, "integrator");
  if (!(cs.dt_min > 0.0) || !(cs.dt_max >= cs.dt_min))
    bad("need 0 < dt_min <= dt_max in integrator");
  if (cs.points < 2) bad("'points' in integrator must be >= 2");

  es.samples = get_int(*ji, "samples", es.samples, "integrator");
  es.dt_lo = get_num(*ji, "dt_lo", es.dt_lo, "integrator");
  es.dt_hi = get_num(*ji, "dt_hi", es.dt_hi, "integrator");
  es.lipschitz_samples = get_int(*ji, "lipschitz_samples", es.lipschitz_samples, "integrator");
  if (es.samples < 1) bad("'samples' in integrator must be >= 1");
  if (!(es.dt_lo > 0.0) || !(es.dt_hi > es.dt_lo) || !(es.dt_hi < 1.0))
    bad("need 0 < dt_lo < dt_hi < 1 in integrator (fractions of the admissible step cap)");
  if (es.lipschitz_samples < 1) bad("'lipschitz_samples' in integrator must be >= 1");
}

OutputSpec parse_output(const json* jo) {
  OutputSpec os;
  if (!jo) return os;
  check_keys(*jo, "output", {"dir", "model", "log", "timing", "csv"});
  os.dir = get_str(*jo, "dir", os.dir, "output");
  os.model = get_str(*jo, "model", os.model, "output");
  os.log = get_str(*jo, "log", os.log, "output");
  os.timing = get_str(*jo, "timing", os.timing, "output");
  os.csv = get_str(*jo, "csv", os.csv, "output");
  if (os.dir.empty()) bad("'dir' in output must be non-empty");
  return os;
}

std::filesystem::path prepare_output_dir(const OutputSpec& out) {
  std::filesystem::path dir(out.dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("output: cannot create directory '" + out.dir + "': " + ec.message());
  return dir;
}

// Index-sharded parallel loop; each index owns its output slot, so results
// are identical to the sequential order. The first exception wins and drains
// the remaining work.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const int workers = worker_count(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto run = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(run);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::int64_t elapsed_ns(const std::chrono::steady_clock::time_point& t0) {
  const auto dt = std::chrono::steady_clock::now() - t0;
  return static_cast<std::int64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(dt).count());
}

std::string fit_slope(const std::vector<double>& dts, const std::vector<double>& errs) {
  double max_err = 0.0;
  for (double e : errs) max_err = std::max(max_err, e);
  if (max_err <= 1e-12) return "exact";
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < errs.size(); ++i) {
    if (errs[i] > 0.0) {
      lx.push_back(std::log(dts[i]));
      ly.push_back(std::log(errs[i]));
    }
  }
  if (lx.size() < 2) return "exact";
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(lx.size());
  my /= static_cast<double>(lx.size());
  double cov = 0.0, var = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    cov += (lx[i] - mx) * (ly[i] - my);
    var += (lx[i] - mx) * (lx[i] - mx);
  }
  return CsvWriter::num(cov / var);
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    bad(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) bad("top level must be a JSON object");
  check_keys(j, "the top level",
             {"experiment", "system", "integrator", "training", "output", "seed"});

  ExperimentConfig cfg;
  cfg.experiment = require_str(j, "experiment", "the top level");
  if (cfg.experiment != "known-stiff" && cfg.experiment != "learn-stiff" &&
      cfg.experiment != "convergence" && cfg.experiment != "enclosure-audit")
    bad("unknown experiment '" + cfg.experiment +
        "' (expected known-stiff, learn-stiff, convergence, or enclosure-audit)");

  if (auto it = j.find("seed"); it != j.end()) {
    if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0))
      bad("'seed' must be a non-negative integer");
    cfg.seed = it->get<std::uint64_t>();
  }

  auto [field, name] = parse_system(find_obj(j, "system", "the top level"));
  cfg.system = std::move(field);
  cfg.system_name = std::move(name);
  validate_field(cfg.system);

  cfg.training = parse_training(find_obj(j, "training", "the top level"));
  parse_integrator(find_obj(j, "integrator", "the top level"), cfg.integrate, cfg.convergence,
                   cfg.enclosure);
  cfg.output = parse_output(find_obj(j, "output", "the top level"));
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("config: read failure on '" + path + "'");
  return parse_experiment_config(ss.str());
}

double normalized_error(const Tensor& xhat, const Tensor& ref) {
  const double err = norm2(sub(xhat, ref));
  const double denom = norm2(ref);
  if (denom == 0.0) return err == 0.0 ? 0.0 : 1.0;
  return std::min(1.0, err / denom);
}

Tensor reference_solution(const VectorField& f, const Tensor& x0, double span) {
  if (const auto* lin = std::get_if<LinearField>(&f))
    return exact_linear_solution(lin->a_matrix, x0, span);
  return dopri5_adaptive(f, x0, 0.0, span, 1.4e-12, 1.4e-12).final_state();
}

Dataset build_trajectory_dataset(const VectorField& f, const DatasetSpec& spec, Rng& rng) {
  if (spec.trajectories < 1) throw ConfigError("dataset: trajectories must be >= 1");
  if (!(spec.horizon > 0.0)) throw ConfigError("dataset: horizon must be positive");
  if (spec.dts.empty()) throw ConfigError("dataset: at least one dt is required");
  for (double dt : spec.dts)
    if (!(dt > 0.0) || dt > spec.horizon)
      throw ConfigError("dataset: each dt must satisfy 0 < dt <= horizon");
  if (!(spec.box > 0.0)) throw ConfigError("dataset: box must be positive");

  const std::size_t n = state_dim(f);
  const auto* lin = std::get_if<LinearField>(&f);
  // One propagator per dt for the analytic-label fast path.
  std::vector<Tensor> props;
  if (lin)
    for (double dt : spec.dts) props.push_back(expm(scale(lin->a_matrix, dt)));

  Dataset out;
  for (int tr = 0; tr < spec.trajectories; ++tr) {
    const Tensor x0 = Tensor::vec(rng.uniform_vec(n, -spec.box, spec.box));
    for (std::size_t di = 0; di < spec.dts.size(); ++di) {
      const double dt = spec.dts[di];
      const auto steps = static_cast<std::size_t>(std::floor(spec.horizon / dt + 1e-9));
      Tensor x = x0;
      double t = 0.0;
      for (std::size_t s = 0; s < steps; ++s) {
        Tensor y = lin ? matmul_nt(x, props[di])
                       : dopri5_adaptive(f, x, t, t + dt, 1.4e-12, 1.4e-12).final_state();
        out.records.push_back({x, t, t + dt, y});
        x = std::move(y);
        t += dt;
      }
    }
  }
  return out;
}

int worker_count(std::size_t jobs) {
  if (jobs <= 1) return 1;
  std::size_t cap = std::thread::hardware_concurrency();
  if (cap == 0) cap = 1;
  if (const char* env = std::getenv("TLODE_THREADS")) {
    char* end = nullptr;
    const long req = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || req < 0)
      throw ConfigError("TLODE_THREADS must be a non-negative integer");
    if (req > 0) cap = static_cast<std::size_t>(req);
  }
  return static_cast<int>(std::min(cap, jobs));
}

TrainRunResult run_train_experiment(const ExperimentConfig& cfg) {
  if (cfg.experiment != "known-stiff" && cfg.experiment != "learn-stiff")
    throw ConfigError("train: experiment must be known-stiff or learn-stiff, got '" +
                      cfg.experiment + "'");
  const std::size_t n = state_dim(cfg.system);

  // Every stream derives from the config seed, in a fixed order.
  Rng root(cfg.seed);
  Rng data_rng = root.split();
  Rng dyn_rng = root.split();
  Rng mid_rng = root.split();
  TrainingConfig tc = cfg.training.cfg;
  tc.seed = root.next_u64();

  Dataset data = build_trajectory_dataset(cfg.system, cfg.training.dataset, data_rng);

  VectorField field_init = cfg.system;
  if (cfg.experiment == "learn-stiff") {
    Mlp net = Mlp::make({n, static_cast<std::size_t>(cfg.training.dynamics_hidden), n},
                        {Activation::None, Activation::None}, dyn_rng);
    field_init = make_mlp_field(std::move(net));
  } else if (tc.n_dynamics > 0) {
    throw ConfigError("train: known-stiff keeps the true dynamics; set dynamics_steps to 0");
  }

  MidpointModel midpoint_init = degenerate_midpoint();
  if (tc.scheme == Scheme::TaylorLagrange) {
    const std::size_t out_dim = cfg.training.gain_shape == GainShape::Full ? n * n : n;
    Mlp net = Mlp::make({n + 1, static_cast<std::size_t>(cfg.training.hidden), out_dim},
                        {Activation::Relu, Activation::None}, mid_rng, cfg.training.zero_init_last);
    midpoint_init = learned_midpoint(std::move(net), cfg.training.gain_shape);
  } else if (tc.scheme == Scheme::HyperEuler) {
    Mlp net = Mlp::make({n + 1, static_cast<std::size_t>(cfg.training.hidden), n},
                        {Activation::Relu, Activation::None}, mid_rng, cfg.training.zero_init_last);
    midpoint_init = learned_midpoint(std::move(net), GainShape::Diag);
  }

  TrainRunResult rr;
  rr.result = train(tc, data, field_init, midpoint_init);

  const auto dir = prepare_output_dir(cfg.output);
  rr.model_path = (dir / cfg.output.model).string();
  rr.log_path = (dir / cfg.output.log).string();
  rr.timing_path = (dir / cfg.output.timing).string();

  SavedModel sm;
  sm.meta.p = tc.order;
  sm.meta.dt = cfg.training.dataset.dts.front();
  sm.meta.seed = cfg.seed;
  if (const auto* mf = std::get_if<MlpField>(&rr.result.field))
    sm.nets.emplace_back("dynamics", mf->net);
  if (const Mlp* mn = midpoint_net(rr.result.midpoint)) {
    if (tc.scheme == Scheme::HyperEuler) {
      sm.nets.emplace_back("residual", *mn);
    } else {
      sm.nets.emplace_back("midpoint", *mn);
      sm.meta.output_shape = gain_shape_name(std::get<LearnedMidpoint>(rr.result.midpoint.v).shape);
    }
  }
  save_model(sm, rr.model_path);
  write_training_log_csv(rr.result.log, rr.log_path);
  write_training_timing_csv(rr.result.log, rr.timing_path);
  return rr;
}

IntegrateRunResult run_integrate_experiment(const ExperimentConfig& cfg) {
  if (cfg.experiment != "known-stiff" && cfg.experiment != "learn-stiff")
    throw ConfigError("integrate: experiment must be known-stiff or learn-stiff, got '" +
                      cfg.experiment + "'");
  const IntegrateSpec& is = cfg.integrate;
  const std::size_t n = state_dim(cfg.system);

  bool wants_tl = false, wants_hyper = false;
  for (Scheme s : is.schemes) {
    wants_tl = wants_tl || s == Scheme::TaylorLagrange;
    wants_hyper = wants_hyper || s == Scheme::HyperEuler;
  }

  // The checkpoint supplies the corrector nets and (learn-stiff) the learned
  // dynamics; the configured system always provides the reference.
  VectorField integrand = cfg.system;
  MidpointModel midpoint = degenerate_midpoint();
  Mlp residual_net;
  bool have_midpoint = false, have_residual = false;
  int series_order = is.order;
  if (!is.model.empty()) {
    SavedModel sm = load_model(is.model);
    series_order = sm.meta.p;
    if (const Mlp* dyn = sm.find("dynamics")) {
      require_topology(*dyn, n, n, "dynamics");
      integrand = make_mlp_field(*dyn);
    }
    if (const Mlp* mid = sm.find("midpoint")) {
      if (sm.meta.output_shape.empty())
        throw ConfigError("model: midpoint net present but output_shape metadata is empty");
      const GainShape shape = gain_shape_from_name(sm.meta.output_shape);
      require_topology(*mid, n + 1, shape == GainShape::Full ? n * n : n, "midpoint");
      midpoint = learned_midpoint(*mid, shape);
      have_midpoint = true;
    }
    if (const Mlp* res = sm.find("residual")) {
      require_topology(*res, n + 1, n, "residual");
      residual_net = *res;
      have_residual = true;
    }
  }
  if (wants_tl && !have_midpoint)
    throw ConfigError("integrate: scheme tl needs a checkpoint with a midpoint net "
                      "(integrator.model)");
  if (wants_hyper && !have_residual)
    throw ConfigError("integrate: scheme hypereuler needs a checkpoint with a residual net "
                      "(integrator.model)");

  Rng rng(cfg.seed);
  std::vector<Tensor> x0s;
  x0s.reserve(static_cast<std::size_t>(is.states));
  for (int i = 0; i < is.states; ++i)
    x0s.push_back(Tensor::vec(rng.uniform_vec(n, -is.box, is.box)));

  std::vector<std::vector<Tensor>> refs(is.spans.size(), std::vector<Tensor>(x0s.size()));
  for (std::size_t si = 0; si < is.spans.size(); ++si)
    parallel_for(x0s.size(),
                 [&](std::size_t i) { refs[si][i] = reference_solution(cfg.system, x0s[i], is.spans[si]); });

  struct Row {
    double err = 0.0;
    std::uint64_t nfe = 0;
    std::int64_t wall_ns = 0;
  };

  const auto dir = prepare_output_dir(cfg.output);
  IntegrateRunResult out;
  out.csv_path = (dir / cfg.output.csv).string();
  CsvWriter csv(out.csv_path, {"scheme", "span", "normalized_error", "nfe", "wall_ns"});

  for (Scheme scheme : is.schemes) {
    IntegratorConfig ic;
    ic.scheme = scheme;
    ic.order = (scheme == Scheme::TaylorLagrange || scheme == Scheme::TruncatedTaylor)
                   ? series_order
                   : is.order;
    ic.steps = is.steps;
    ic.rtol = is.rtol;
    ic.atol = is.atol;
    IntegrateAux aux;
    if (scheme == Scheme::TaylorLagrange) aux.midpoint = &midpoint;
    if (scheme == Scheme::HyperEuler) aux.residual = &residual_net;

    for (std::size_t si = 0; si < is.spans.size(); ++si) {
      const double span = is.spans[si];
      std::vector<Row> rows(x0s.size());
      parallel_for(x0s.size(), [&](std::size_t i) {
        Trajectory tr = integrate(integrand, aux, x0s[i], 0.0, span, ic);  // warm-up
        std::vector<std::int64_t> times(static_cast<std::size_t>(is.timing_reps));
        for (int rep = 0; rep < is.timing_reps; ++rep) {
          const auto t0 = std::chrono::steady_clock::now();
          Trajectory timed = integrate(integrand, aux, x0s[i], 0.0, span, ic);
          times[static_cast<std::size_t>(rep)] = elapsed_ns(t0);
          tr = std::move(timed);
        }
        std::sort(times.begin(), times.end());
        rows[i].wall_ns = times[times.size() / 2];
        rows[i].err = normalized_error(tr.final_state(), refs[si][i]);
        rows[i].nfe = tr.field_evals;
      });
      const std::string sname = scheme_name(scheme);
      const std::string sspan = CsvWriter::num(span);
      for (const Row& r : rows) {
        csv.row({sname, sspan, CsvWriter::num(r.err), CsvWriter::num(r.nfe),
                 CsvWriter::num(static_cast<std::uint64_t>(r.wall_ns))});
        ++out.rows;
      }
    }
  }
  csv.close();
  return out;
}

ConvergenceRunResult run_convergence_experiment(const ExperimentConfig& cfg) {
  if (cfg.experiment != "convergence")
    throw ConfigError("convergence: experiment must be convergence, got '" + cfg.experiment + "'");
  const auto* lin = std::get_if<LinearField>(&cfg.system);
  if (!lin)
    throw ConfigError("convergence: an analytic (linear) system is required for the exact "
                      "reference and midpoint");
  const ConvergenceSpec& cs = cfg.convergence;
  const IntegrateSpec& is = cfg.integrate;
  const std::size_t n = state_dim(cfg.system);

  Rng rng(cfg.seed);
  std::vector<Tensor> x0s;
  x0s.reserve(static_cast<std::size_t>(is.states));
  for (int i = 0; i < is.states; ++i)
    x0s.push_back(Tensor::vec(rng.uniform_vec(n, -is.box, is.box)));

  std::vector<double> dts(static_cast<std::size_t>(cs.points));
  const double ratio = cs.dt_max / cs.dt_min;
  for (int i = 0; i < cs.points; ++i)
    dts[static_cast<std::size_t>(i)] =
        cs.dt_min * std::pow(ratio, static_cast<double>(i) / static_cast<double>(cs.points - 1));

  const auto dir = prepare_output_dir(cfg.output);
  ConvergenceRunResult out;
  out.csv_path = (dir / cfg.output.csv).string();
  CsvWriter csv(out.csv_path, {"scheme", "p", "dt", "error", "slope"});

  for (const ConvergenceEntry& e : cs.entries) {
    if (e.scheme == Scheme::Dopri5 || e.scheme == Scheme::HyperEuler)
      throw ConfigError("convergence: entries must use fixed-step analytic schemes "
                        "(tl, truncated, euler, rk4)");
    MidpointModel mid = degenerate_midpoint();
    std::string label = scheme_name(e.scheme) + "-p" + std::to_string(e.order);
    if (e.scheme == Scheme::TaylorLagrange) {
      label += "-" + e.midpoint;
      if (e.midpoint == "analytic") mid = analytic_linear_midpoint(lin->a_matrix);
    }
    IntegratorConfig ic;
    ic.scheme = e.scheme;
    ic.order = e.order;
    ic.steps = 1;
    IntegrateAux aux;
    if (e.scheme == Scheme::TaylorLagrange) aux.midpoint = &mid;

    std::vector<double> errs(dts.size());
    for (std::size_t di = 0; di < dts.size(); ++di) {
      double acc = 0.0;
      for (const Tensor& x0 : x0s) {
        const Tensor xhat = integrate(cfg.system, aux, x0, 0.0, dts[di], ic).final_state();
        const Tensor ref = exact_linear_solution(lin->a_matrix, x0, dts[di]);
        const double denom = norm2(ref);
        const double err = norm2(sub(xhat, ref));
        acc += denom == 0.0 ? err : err / denom;  // unclipped one-step relative error
      }
      errs[di] = acc / static_cast<double>(x0s.size());
    }
    const std::string slope = fit_slope(dts, errs);
    for (std::size_t di = 0; di < dts.size(); ++di)
      csv.row({label, CsvWriter::num(e.order), CsvWriter::num(dts[di]), CsvWriter::num(errs[di]),
               slope});
    out.slopes.emplace_back(label, slope);
  }
  csv.close();
  return out;
}

EnclosureRunResult run_enclosure_audit(const ExperimentConfig& cfg) {
  if (cfg.experiment != "enclosure-audit")
    throw ConfigError("enclosure-audit: experiment must be enclosure-audit, got '" +
                      cfg.experiment + "'");
  const EnclosureSpec& es = cfg.enclosure;
  const IntegrateSpec& is = cfg.integrate;
  const std::size_t n = state_dim(cfg.system);

  Rng rng(cfg.seed);
  Rng lip_rng = rng.split();
  const Tensor lo = Tensor::full({n}, -is.box);
  const Tensor hi = Tensor::full({n}, is.box);
  const LipschitzEstimate le =
      lipschitz_estimate(cfg.system, lo, hi, static_cast<std::size_t>(es.lipschitz_samples), lip_rng);
  // Sampled estimates get a safety margin; linear row norms are exact.
  const double l2 = std::holds_alternative<LinearField>(cfg.system) ? le.l2 : le.l2 * 1.1;
  const double cap = l2 > 0.0 ? 1.0 / (std::sqrt(static_cast<double>(n)) * l2) : 1.0;

  struct Sample {
    Tensor x;
    double dt = 0.0;
  };
  std::vector<Sample> samples(static_cast<std::size_t>(es.samples));
  for (auto& s : samples) {
    s.x = Tensor::vec(rng.uniform_vec(n, -is.box, is.box));
    s.dt = cap * rng.uniform(es.dt_lo, es.dt_hi);
  }

  struct Row {
    double dt = 0.0, radius_max = 0.0, max_drift = 0.0, drift_bound = 0.0;
    bool inside = false, ok = false;
  };
  std::vector<Row> rows(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const Sample& s = samples[i];
    const AprioriEnclosure enc = apriori_enclosure(cfg.system, l2, s.x, s.dt);
    const double bound = gronwall_variation_bound(cfg.system, l2, s.x, s.dt);
    const Trajectory tr = dopri5_adaptive(cfg.system, s.x, 0.0, s.dt, 1.4e-12, 1.4e-12);
    bool inside = true;
    double drift = 0.0;
    for (const Tensor& st : tr.states) {
      inside = inside && contains(enc, st);
      drift = std::max(drift, norm2(sub(st, s.x)));
    }
    Row& r = rows[i];
    r.dt = s.dt;
    r.radius_max = norm_inf(enc.radius_vector);
    r.max_drift = drift;
    r.drift_bound = bound;
    r.inside = inside;
    r.ok = inside && drift <= bound * (1.0 + 1e-9) + 1e-12;
  });

  const auto dir = prepare_output_dir(cfg.output);
  EnclosureRunResult out;
  out.csv_path = (dir / cfg.output.csv).string();
  out.samples = es.samples;
  CsvWriter csv(out.csv_path,
                {"sample", "dt", "radius_max", "inside", "max_drift", "drift_bound", "ok"});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row& r = rows[i];
    if (!r.ok) ++out.violations;
    csv.row({CsvWriter::num(static_cast<int>(i)), CsvWriter::num(r.dt),
             CsvWriter::num(r.radius_max), r.inside ? "1" : "0", CsvWriter::num(r.max_drift),
             CsvWriter::num(r.drift_bound), r.ok ? "1" : "0"});
  }
  csv.close();
  return out;
}

}  // namespace tlode
