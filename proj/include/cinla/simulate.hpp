#pragma once

#include "cinla/model.hpp"

#include <cstdint>

namespace cinla {

/// Generating values: fixed effects are given, random effects are drawn from
/// their blocks at the given hyperparameters.
struct TrueValues {
  Vector fixed;
  HyperParams theta;
};

struct SimulatedData {
  Vector y;
  Vector latent;  // the drawn latent field
};

SimulatedData simulate_dataset(const ModelSpec& spec, const TrueValues& truth, std::uint64_t seed);

}  // namespace cinla
