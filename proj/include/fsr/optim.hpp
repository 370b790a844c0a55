#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fsr/matrix.hpp"

namespace fsr {

/// Moment estimates for one parameter group. Moments are allocated on the
/// first step, matching the shapes of the parameters passed in.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t t = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

/// Bias-corrected Adam update applied in place. Throws TrainingError if a
/// gradient entry is not finite, and DimensionError on shape mismatch.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
               double lr);

}  // namespace fsr
