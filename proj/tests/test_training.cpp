#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "tlode/dynamics.hpp"
#include "tlode/error.hpp"
#include "tlode/integrators.hpp"
#include "tlode/midpoint.hpp"
#include "tlode/rng.hpp"
#include "tlode/training.hpp"

using namespace tlode;

namespace {

double rel_err(const Tensor& got, const Tensor& want) {
  const double denom = norm2(want);
  const double err = norm2(sub(got, want));
  return denom > 0 ? err / denom : err;
}

// One-step pairs of the stiff benchmark with analytic labels.
Dataset stiff_pairs(int trajectories, double dt, double horizon, std::uint64_t seed) {
  const LinearField f = make_stiff_system();
  const Tensor e = expm(scale(f.a_matrix, dt));
  Rng rng(seed);
  Dataset data;
  const int steps = static_cast<int>(std::llround(horizon / dt));
  for (int tr = 0; tr < trajectories; ++tr) {
    Tensor x = Tensor::vec(rng.uniform_vec(2, -0.5, 0.5));
    double t = 0.0;
    for (int k = 0; k < steps; ++k) {
      Tensor y = matmul_nt(x, e);
      data.records.push_back({x, t, t + dt, y});
      x = std::move(y);
      t += dt;
    }
  }
  return data;
}

bool same_params(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].data != b[i].data) return false;
  return true;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string first_line(const std::string& bytes) {  // strips the CRLF ending
  std::string line = bytes.substr(0, bytes.find('\n'));
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

double heldout_mean_clipped_rel(const VectorField& f, const MidpointModel& mid,
                                const Dataset& held, int order) {
  EagerOps ops;
  double acc = 0.0;
  for (const DataRecord& r : held.records) {
    const std::vector<double> dts = {r.t_end - r.t0};
    const Tensor xh = tl_step_ops(ops, f, std::span<const Tensor>(), mid,
                                  std::span<const Tensor>(), r.x0, dts, order);
    acc += std::min(1.0, norm2(sub(xh, r.y)) / norm2(r.y));
  }
  return acc / static_cast<double>(held.size());
}

}  // namespace

TEST_CASE("a perfect model scores zero loss and zero prediction error") {
  const LinearField f = make_stiff_system();
  const Dataset data = stiff_pairs(4, 0.05, 1.0, 3);
  const MidpointModel mid = analytic_linear_midpoint(f.a_matrix);
  const LossResult dl = dynamics_loss(f, mid, data, 0.0, 1, 1);
  CHECK(dl.loss <= 1e-20);
  CHECK(dl.grads.empty());  // analytic dynamics carry no parameters
  const LossResult ml = midpoint_loss(f, mid, data, 1, 1);
  CHECK(ml.loss <= 1e-20);
  CHECK(prediction_mse(f, mid, data, 1, 1) <= 1e-25);
}

TEST_CASE("first order with a degenerate midpoint collapses to explicit Euler") {
  const LinearField f = make_stiff_system();
  const Dataset data = stiff_pairs(2, 0.05, 0.5, 5);
  const MidpointModel degen = degenerate_midpoint();
  const double tl_mse = prediction_mse(f, degen, data, 1, 1, Scheme::TaylorLagrange);
  const double euler_mse = prediction_mse(f, degen, data, 1, 1, Scheme::Euler);
  CHECK(tl_mse == euler_mse);  // identical arithmetic
  // and the Eq-style sum loss is the same quantity times B * n
  const LossResult dl = dynamics_loss(f, degen, data, 0.0, 1, 1);
  CHECK(dl.loss == doctest::Approx(euler_mse * static_cast<double>(data.size()) * 2.0)
                       .epsilon(1e-13));
}

TEST_CASE("scheme dispatch: truncated equals degenerate series, zero-net residual equals Euler") {
  const LinearField f = make_stiff_system({-1.0, -8.0});
  const Dataset data = stiff_pairs(2, 0.02, 0.3, 11);
  const MidpointModel degen = degenerate_midpoint();
  for (int p : {1, 2, 3})
    CHECK(prediction_mse(f, degen, data, p, 2, Scheme::TaylorLagrange) ==
          prediction_mse(f, degen, data, p, 2, Scheme::TruncatedTaylor));

  Rng rng(13);
  Mlp zero = Mlp::make({3, 4, 2}, {Activation::Relu, Activation::None}, rng, true);
  const MidpointModel residual = learned_midpoint(std::move(zero), GainShape::Diag);
  CHECK(prediction_mse(f, residual, data, 1, 1, Scheme::HyperEuler) ==
        prediction_mse(f, degen, data, 1, 1, Scheme::Euler));
}

TEST_CASE("zero dynamics net predicts the fixed point") {
  Rng rng(17);
  Mlp net = Mlp::make({2, 4, 2}, {Activation::Tanh, Activation::None}, rng, true);
  for (auto& p : net.params) p = Tensor::zeros(p.shape);  // f == 0 identically
  const VectorField f = make_mlp_field(std::move(net));
  const Dataset data = stiff_pairs(2, 0.05, 0.5, 19);
  const LossResult dl = dynamics_loss(f, degenerate_midpoint(), data, 0.0, 1, 1);
  double want = 0.0;
  for (const DataRecord& r : data.records) want += sum_squares(sub(r.x0, r.y));
  CHECK(dl.loss == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("distillation: a zero field returns its inputs as labels") {
  const LinearField f{Tensor::zeros({2, 2})};
  const Dataset src = stiff_pairs(2, 0.1, 0.5, 23);
  Rng rng(29);
  const DistillResult d = distill_dataset(f, src, 16, rng);
  CHECK(d.skipped == 0);
  REQUIRE(d.data.size() == 16);
  for (const DataRecord& r : d.data.records) CHECK(r.x0.data == r.y.data);
}

TEST_CASE("distillation: labels track the exact linear flow") {
  const LinearField f = make_stiff_system();
  const Dataset src = stiff_pairs(3, 0.05, 0.5, 31);
  Rng rng(37);
  const DistillResult d = distill_dataset(f, src, 32, rng);
  CHECK(d.skipped == 0);
  REQUIRE(d.data.size() == 32);
  std::set<std::pair<double, double>> source_states;
  for (const DataRecord& r : src.records) source_states.insert({r.x0.data[0], r.x0.data[1]});
  for (const DataRecord& r : d.data.records) {
    const Tensor want = exact_linear_solution(f.a_matrix, r.x0, r.t_end - r.t0);
    CHECK(rel_err(r.y, want) <= 1e-10);
    CHECK(source_states.count({r.x0.data[0], r.x0.data[1]}) == 1);  // drawn from the source
  }
}

TEST_CASE("distillation: oversampling beyond the source size is allowed") {
  const LinearField f = make_stiff_system({-1.0, -2.0});
  Dataset src;
  src.records.push_back({Tensor::vec({0.1, 0.2}), 0.0, 0.05, Tensor::vec({0.0, 0.0})});
  src.records.push_back({Tensor::vec({-0.3, 0.4}), 0.0, 0.05, Tensor::vec({0.0, 0.0})});
  Rng rng(41);
  const DistillResult d = distill_dataset(f, src, 9, rng);
  CHECK(d.data.size() == 9);
  CHECK(d.skipped == 0);
}

TEST_CASE("distillation: failed reference solves are counted, not fabricated") {
  const LinearField f{Tensor::matrix(1, 1, {-1e16})};  // forces step underflow
  Dataset src;
  src.records.push_back({Tensor::vec({0.5}), 0.0, 1.0, Tensor::vec({0.0})});
  Rng rng(43);
  const DistillResult d = distill_dataset(f, src, 5, rng);
  CHECK(d.data.empty());
  CHECK(d.skipped == 5);
}

TEST_CASE("corrector loss: the analytic gain beats the degenerate midpoint outright") {
  const LinearField f = make_stiff_system();
  const Dataset data = stiff_pairs(4, 0.05, 1.0, 47);
  const LossResult analytic = midpoint_loss(f, analytic_linear_midpoint(f.a_matrix), data, 1, 1);
  const LossResult degen = midpoint_loss(f, degenerate_midpoint(), data, 1, 1);
  CHECK(analytic.loss <= 1e-20);
  CHECK(degen.loss > 1e3 * (analytic.loss + 1e-30));
}

TEST_CASE("gradients flow only into the live component") {
  Rng rng(53);
  Mlp fnet = Mlp::make({2, 4, 2}, {Activation::Tanh, Activation::None}, rng);
  Mlp mnet = Mlp::make({3, 4, 4}, {Activation::Tanh, Activation::None}, rng);
  const VectorField f = make_mlp_field(std::move(fnet));
  const MidpointModel mid = learned_midpoint(std::move(mnet), GainShape::Full);
  const Dataset data = stiff_pairs(1, 0.05, 0.25, 59);

  const LossResult dl = dynamics_loss(f, mid, data, 0.5, 2, 1);
  REQUIRE(dl.grads.size() == 4);  // two layers of the dynamics net
  for (const auto& name : dl.grad_names) CHECK(name.substr(0, 8) == "dynamics");
  double gnorm = 0.0;
  for (const auto& g : dl.grads) gnorm += sum_squares(g);
  CHECK(gnorm > 0.0);

  const LossResult ml = midpoint_loss(f, mid, data, 2, 1);
  REQUIRE(ml.grads.size() == 4);
  for (const auto& name : ml.grad_names) CHECK(name.substr(0, 8) == "midpoint");
}

TEST_CASE("loss gradients match central differences") {
  Rng rng(61);
  Mlp fnet = Mlp::make({2, 3, 2}, {Activation::Tanh, Activation::None}, rng);
  Mlp mnet = Mlp::make({3, 3, 2}, {Activation::Tanh, Activation::None}, rng);
  const Dataset data = stiff_pairs(1, 0.04, 0.2, 67);

  for (int p : {1, 2}) {
    // Eq-style dynamics loss with an active remainder penalty.
    {
      const VectorField f = make_mlp_field(fnet);
      const MidpointModel mid = learned_midpoint(mnet, GainShape::Diag);
      const LossResult base = dynamics_loss(f, mid, data, 0.3, p, 1);
      std::size_t checked = 0;
      for (std::size_t t = 0; t < 4 && checked < 10; ++t) {
        for (std::size_t e = 0; e < base.grads[t].data.size() && checked < 10; e += 3, ++checked) {
          VectorField fp = f;
          VectorField fm = f;
          const double h = 1e-6;
          std::get<MlpField>(fp).net.params[t].data[e] += h;
          std::get<MlpField>(fm).net.params[t].data[e] -= h;
          const double lp = dynamics_loss(fp, mid, data, 0.3, p, 1).loss;
          const double lm = dynamics_loss(fm, mid, data, 0.3, p, 1).loss;
          const double fd = (lp - lm) / (2 * h);
          const double g = base.grads[t].data[e];
          CHECK(std::fabs(fd - g) <= 1e-4 * std::max({std::fabs(fd), std::fabs(g), 1e-6}));
        }
      }
    }
    // Corrector loss with frozen dynamics.
    {
      const VectorField f = make_stiff_system({-1.0, -6.0});
      const MidpointModel mid = learned_midpoint(mnet, GainShape::Diag);
      const LossResult base = midpoint_loss(f, mid, data, p, 1);
      std::size_t checked = 0;
      for (std::size_t t = 0; t < 4 && checked < 10; ++t) {
        for (std::size_t e = 0; e < base.grads[t].data.size() && checked < 10; e += 3, ++checked) {
          MidpointModel mp = mid;
          MidpointModel mm = mid;
          const double h = 1e-6;
          midpoint_net(mp)->params[t].data[e] += h;
          midpoint_net(mm)->params[t].data[e] -= h;
          const double lp = midpoint_loss(f, mp, data, p, 1).loss;
          const double lm = midpoint_loss(f, mm, data, p, 1).loss;
          const double fd = (lp - lm) / (2 * h);
          const double g = base.grads[t].data[e];
          CHECK(std::fabs(fd - g) <= 1e-4 * std::max({std::fabs(fd), std::fabs(g), 1e-6}));
        }
      }
    }
  }
}

TEST_CASE("training config validation rejects out-of-range fields") {
  TrainingConfig cfg;
  cfg.n_midpoint = 1;
  CHECK_NOTHROW(validate_training_config(cfg));
  TrainingConfig bad = cfg;
  bad.order = 4;
  CHECK_THROWS_AS(validate_training_config(bad), ConfigError);
  bad = cfg;
  bad.held_out_fraction = 1.0;
  CHECK_THROWS_AS(validate_training_config(bad), ConfigError);
  bad = cfg;
  bad.scheme = Scheme::Dopri5;
  CHECK_THROWS_AS(validate_training_config(bad), ConfigError);
  bad = cfg;
  bad.scheme = Scheme::Euler;  // corrector steps are meaningless here
  CHECK_THROWS_AS(validate_training_config(bad), ConfigError);
  bad = cfg;
  bad.scheme = Scheme::Euler;
  bad.n_midpoint = 0;
  bad.lambda = 1.0;  // remainder penalty needs a series scheme
  CHECK_THROWS_AS(validate_training_config(bad), ConfigError);
  bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(validate_training_config(bad), ConfigError);
}

TEST_CASE("a zero-step run is a bitwise no-op") {
  const Dataset data = stiff_pairs(2, 0.05, 0.5, 71);
  Rng rng(73);
  Mlp mnet = Mlp::make({3, 8, 4}, {Activation::Relu, Activation::None}, rng, true);
  const MidpointModel mid = learned_midpoint(mnet, GainShape::Full);
  TrainingConfig cfg;
  cfg.n_rounds = 1;
  cfg.n_dynamics = 0;
  cfg.n_midpoint = 0;
  cfg.seed = 5;
  const TrainResult res = train(cfg, data, make_stiff_system(), mid);
  CHECK(!res.aborted);
  CHECK(res.log.rows.empty());
  CHECK(same_params(midpoint_net(res.midpoint)->params, mnet.params));
}

TEST_CASE("held-out split: deterministic size and membership") {
  const Dataset data = stiff_pairs(5, 0.05, 1.0, 79);  // 100 records
  TrainingConfig cfg;
  cfg.n_midpoint = 2;
  cfg.n_distill = 8;
  cfg.batch_size = 8;
  cfg.held_out_fraction = 0.1;
  cfg.seed = 83;
  Rng rng(89);
  Mlp mnet = Mlp::make({3, 4, 2}, {Activation::Relu, Activation::None}, rng, true);
  const MidpointModel mid = learned_midpoint(std::move(mnet), GainShape::Diag);
  const TrainResult a = train(cfg, data, make_stiff_system(), mid);
  const TrainResult b = train(cfg, data, make_stiff_system(), mid);
  REQUIRE(a.held_out.size() == 10);
  std::set<std::pair<double, double>> source_states;
  for (const DataRecord& r : data.records) source_states.insert({r.x0.data[0], r.x0.data[1]});
  for (std::size_t i = 0; i < a.held_out.size(); ++i) {
    CHECK(source_states.count({a.held_out.records[i].x0.data[0],
                               a.held_out.records[i].x0.data[1]}) == 1);
    CHECK(a.held_out.records[i].x0.data == b.held_out.records[i].x0.data);
  }
}

TEST_CASE("training log repeats byte-for-byte under a fixed seed") {
  const Dataset data = stiff_pairs(3, 0.05, 1.0, 97);
  TrainingConfig cfg;
  cfg.n_rounds = 2;
  cfg.n_midpoint = 10;
  cfg.n_distill = 32;
  cfg.batch_size = 16;
  cfg.seed = 101;
  Rng rng(103);
  Mlp mnet = Mlp::make({3, 8, 4}, {Activation::Relu, Activation::None}, rng, true);
  const MidpointModel mid = learned_midpoint(std::move(mnet), GainShape::Full);

  const std::string p1 = temp_path("tlode_log_a.csv");
  const std::string p2 = temp_path("tlode_log_b.csv");
  const std::string pt = temp_path("tlode_timing_a.csv");
  const TrainResult a = train(cfg, data, make_stiff_system(), mid);
  const TrainResult b = train(cfg, data, make_stiff_system(), mid);
  write_training_log_csv(a.log, p1);
  write_training_log_csv(b.log, p2);
  write_training_timing_csv(a.log, pt);
  const std::string bytes1 = read_file(p1);
  CHECK(bytes1 == read_file(p2));
  CHECK(first_line(bytes1) == "step,round,phase,loss,held_out_mse,remainder,nfe");
  const std::string timing = read_file(pt);
  CHECK(first_line(timing) == "step,wall_ns");
  CHECK(std::count(bytes1.begin(), bytes1.end(), '\n') ==
        std::count(timing.begin(), timing.end(), '\n'));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
  std::filesystem::remove(pt);
}

TEST_CASE("a non-finite loss aborts and keeps the last good parameters") {
  const Dataset data = stiff_pairs(2, 0.05, 0.5, 107);
  Rng rng(109);
  Mlp fnet = Mlp::make({2, 4, 2}, {Activation::Tanh, Activation::None}, rng);
  fnet.params.back().data[0] = 1e308;  // output bias: squaring the residual overflows
  const VectorField f = make_mlp_field(fnet);
  Rng rng2(113);
  Mlp mnet = Mlp::make({3, 4, 2}, {Activation::Relu, Activation::None}, rng2, true);
  const MidpointModel mid = learned_midpoint(mnet, GainShape::Diag);
  TrainingConfig cfg;
  cfg.n_rounds = 1;
  cfg.n_dynamics = 5;
  cfg.n_midpoint = 0;
  cfg.seed = 127;
  const TrainResult res = train(cfg, data, f, mid);
  CHECK(res.aborted);
  CHECK(!res.abort_message.empty());
  CHECK(res.log.rows.empty());  // failed before any completed step
  CHECK(same_params(std::get<MlpField>(res.field).net.params, fnet.params));
  CHECK(same_params(midpoint_net(res.midpoint)->params, mnet.params));
}

TEST_CASE("training aborts when distillation produces no usable labels") {
  const LinearField f{Tensor::matrix(1, 1, {-1e16})};
  Dataset data;
  for (int i = 0; i < 4; ++i)
    data.records.push_back({Tensor::vec({0.1 * (i + 1)}), 0.0, 1.0, Tensor::vec({0.0})});
  Rng rng(131);
  Mlp mnet = Mlp::make({2, 4, 1}, {Activation::Relu, Activation::None}, rng, true);
  const MidpointModel mid = learned_midpoint(mnet, GainShape::Diag);
  TrainingConfig cfg;
  cfg.n_rounds = 1;
  cfg.n_midpoint = 3;
  cfg.n_distill = 8;
  cfg.held_out_fraction = 0.0;
  cfg.seed = 137;
  const TrainResult res = train(cfg, data, f, mid);
  CHECK(res.aborted);
  CHECK(res.log.distill_skipped == 8);
  CHECK(same_params(midpoint_net(res.midpoint)->params, mnet.params));
}

TEST_CASE("train validates scheme and component pairings") {
  const Dataset data = stiff_pairs(1, 0.05, 0.25, 139);
  Rng rng(149);
  Mlp mnet = Mlp::make({3, 4, 2}, {Activation::Relu, Activation::None}, rng, true);
  TrainingConfig cfg;
  cfg.n_dynamics = 1;
  // dynamics steps on an analytic field have nothing to update
  CHECK_THROWS_AS(train(cfg, data, make_stiff_system(),
                        learned_midpoint(mnet, GainShape::Diag)),
                  ConfigError);
  // corrector steps without a learnable corrector
  TrainingConfig cfg2;
  cfg2.n_midpoint = 1;
  CHECK_THROWS_AS(train(cfg2, data, make_stiff_system(), degenerate_midpoint()), ConfigError);
  // the residual-corrected scheme needs a state+dt -> state net
  TrainingConfig cfg3;
  cfg3.scheme = Scheme::HyperEuler;
  cfg3.n_midpoint = 1;
  Rng rng2(151);
  Mlp wrong = Mlp::make({3, 4, 4}, {Activation::Relu, Activation::None}, rng2, true);
  CHECK_THROWS_AS(train(cfg3, data, make_stiff_system(),
                        learned_midpoint(std::move(wrong), GainShape::Full)),
                  ConfigError);
}

TEST_CASE("remainder penalty shrinks the learned remainder across seeds") {
  const Dataset data = stiff_pairs(20, 0.05, 2.0, 157);  // 800 records
  double mean_plain = 0.0, mean_reg = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (double lambda : {0.0, 2e2}) {
      Rng rng(1000 + seed);
      Mlp fnet = Mlp::make({2, 16, 2}, {Activation::None, Activation::None}, rng);
      TrainingConfig cfg;
      cfg.n_rounds = 1;
      cfg.n_dynamics = 300;
      cfg.n_midpoint = 0;
      cfg.lambda = lambda;
      cfg.batch_size = 128;
      cfg.lr_dynamics = 1e-2;
      cfg.decay = 1e-4;
      cfg.seed = 2000 + seed;
      const TrainResult res = train(cfg, data, make_mlp_field(fnet), degenerate_midpoint());
      REQUIRE(!res.aborted);
      double rem = 0.0;
      for (const DataRecord& r : res.held_out.records)
        rem += norm2(remainder_estimate(res.field, res.midpoint, r.x0, r.t_end - r.t0, 1));
      rem /= static_cast<double>(res.held_out.size());
      (lambda == 0.0 ? mean_plain : mean_reg) += rem / 5.0;
    }
  }
  CHECK(mean_reg < mean_plain);
  MESSAGE("mean remainder magnitude: plain ", mean_plain, " regularized ", mean_reg);
}

TEST_CASE("published corrector recipe reaches its target accuracy") {
  // 100 trajectories over 10 s sliced at dt = 0.05, 10% held out, one round
  // of 1000 corrector epochs (batch 512, lr 1e-3 with 1e-4 exponential
  // decay), first-order step with a full per-state gain.
  const std::uint64_t seed = 7;
  const double dt = 0.05;
  const Dataset data = stiff_pairs(100, dt, 10.0, seed);
  REQUIRE(data.size() == 20000);

  TrainingConfig cfg;
  cfg.n_rounds = 1;
  cfg.n_dynamics = 0;
  const std::size_t train_n = data.size() - static_cast<std::size_t>(0.1 * data.size());
  cfg.n_distill = static_cast<int>(train_n);
  cfg.n_midpoint = 1000 * static_cast<int>((train_n + 511) / 512);
  cfg.lr_midpoint = 1e-3;
  cfg.decay = 1e-4;
  cfg.batch_size = 512;
  cfg.order = 1;
  cfg.seed = seed;

  Rng net_rng(seed + 1);
  Mlp net = Mlp::make({3, 16, 4}, {Activation::Relu, Activation::None}, net_rng, true);
  const MidpointModel mid = learned_midpoint(std::move(net), GainShape::Full);
  const VectorField f = make_stiff_system();

  const TrainResult res = train(cfg, data, f, mid);
  REQUIRE(!res.aborted);
  CHECK(res.log.distill_skipped == 0);
  CHECK(res.log.rows.size() == static_cast<std::size_t>(cfg.n_midpoint));

  const double held = heldout_mean_clipped_rel(f, res.midpoint, res.held_out, 1);
  MESSAGE("held-out mean clipped relative error: ", held);
  CHECK(held <= 1e-3);

  // The held-out states live mostly on the slow manifold, so the uncorrected
  // step is not hopeless there -- but the corrector still wins by an order of
  // magnitude or more.
  const double degen =
      heldout_mean_clipped_rel(f, degenerate_midpoint(), res.held_out, 1);
  CHECK(degen > 10 * held);
}
