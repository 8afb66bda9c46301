#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tlode/nn.hpp"

namespace tlode {

// Metadata a checkpoint carries so an integrator can be rebuilt as trained.
struct ModelMetadata {
  int p = 1;
  double dt = 0.0;
  std::string output_shape;  // "full" / "diag" for midpoint nets, "" otherwise
  std::uint64_t seed = 0;
};

// One checkpoint file: named nets (slots like "midpoint", "dynamics",
// "residual") plus metadata. Parameters serialize as IEEE-754 hex strings, so
// save/load round trips are bit-exact.
struct SavedModel {
  ModelMetadata meta;
  std::vector<std::pair<std::string, Mlp>> nets;

  const Mlp* find(const std::string& name) const;
};

void save_model(const SavedModel& m, const std::string& path);
SavedModel load_model(const std::string& path);

// Binds a loaded net to a use site; throws ConfigError naming the role and
// the expected/actual dimensions.
void require_topology(const Mlp& net, std::size_t in, std::size_t out, const std::string& role);

// Human-readable description (the `model inspect` output).
std::string model_summary(const SavedModel& m);

}  // namespace tlode
