#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>

#include "CLI11.hpp"
#include "tlode/error.hpp"
#include "tlode/experiments.hpp"
#include "tlode/model_io.hpp"

namespace {

struct SubArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* out_opt = nullptr;
};

void add_common(CLI::App* sub, SubArgs& a) {
  sub->add_option("--config", a.config, "experiment config file (JSON)")->required();
  a.seed_opt = sub->add_option("--seed", a.seed, "override the config seed");
  a.out_opt = sub->add_option("--out", a.out, "override the output directory");
}

tlode::ExperimentConfig load_with_overrides(const SubArgs& a) {
  tlode::ExperimentConfig cfg = tlode::load_experiment_config(a.config);
  if (a.seed_opt->count() > 0) cfg.seed = a.seed;
  if (a.out_opt->count() > 0) cfg.output.dir = a.out;
  return cfg;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const tlode::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const tlode::ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const tlode::NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const tlode::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Taylor-series ODE integration with learned remainder correction"};
  app.require_subcommand(1);

  SubArgs integrate_args, train_args, conv_args, enc_args;
  CLI::App* cmd_integrate =
      app.add_subcommand("integrate", "sweep schemes over sampled initial states, write a CSV");
  add_common(cmd_integrate, integrate_args);
  CLI::App* cmd_train =
      app.add_subcommand("train", "run alternating training, write checkpoint and logs");
  add_common(cmd_train, train_args);
  CLI::App* cmd_convergence =
      app.add_subcommand("convergence", "one-step error orders on an analytic system");
  add_common(cmd_convergence, conv_args);
  CLI::App* cmd_enclosure =
      app.add_subcommand("enclosure-audit", "check a priori enclosures against a tight reference");
  add_common(cmd_enclosure, enc_args);

  std::string inspect_path;
  CLI::App* cmd_model = app.add_subcommand("model", "checkpoint utilities");
  cmd_model->require_subcommand(1);
  CLI::App* cmd_inspect = cmd_model->add_subcommand("inspect", "describe a checkpoint file");
  cmd_inspect->add_option("path", inspect_path, "checkpoint file (.tlmodel.json)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad command line is a config error
  }

  if (*cmd_integrate)
    return guarded([&] {
      const auto res = tlode::run_integrate_experiment(load_with_overrides(integrate_args));
      std::printf("wrote %zu rows to %s\n", res.rows, res.csv_path.c_str());
      return 0;
    });

  if (*cmd_train)
    return guarded([&] {
      const auto res = tlode::run_train_experiment(load_with_overrides(train_args));
      std::printf("model: %s\nlog: %s\ntiming: %s\n", res.model_path.c_str(),
                  res.log_path.c_str(), res.timing_path.c_str());
      if (res.result.aborted) {
        std::fprintf(stderr, "error: training aborted (last good checkpoint kept): %s\n",
                     res.result.abort_message.c_str());
        return 3;
      }
      return 0;
    });

  if (*cmd_convergence)
    return guarded([&] {
      const auto res = tlode::run_convergence_experiment(load_with_overrides(conv_args));
      for (const auto& [label, slope] : res.slopes)
        std::printf("%s slope %s\n", label.c_str(), slope.c_str());
      std::printf("wrote %s\n", res.csv_path.c_str());
      return 0;
    });

  if (*cmd_enclosure)
    return guarded([&] {
      const auto res = tlode::run_enclosure_audit(load_with_overrides(enc_args));
      std::printf("%d/%d samples enclosed, %d violations\nwrote %s\n",
                  res.samples - res.violations, res.samples, res.violations,
                  res.csv_path.c_str());
      return res.violations > 0 ? 3 : 0;
    });

  return guarded([&] {
    const tlode::SavedModel m = tlode::load_model(inspect_path);
    std::fputs(tlode::model_summary(m).c_str(), stdout);
    return 0;
  });
}
