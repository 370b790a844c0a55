#include "fsr/optim.hpp"

#include <cmath>
#include <string>

#include "fsr/errors.hpp"

namespace fsr {

void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
               double lr) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state size changed");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->same_shape(grads[k]) || !state.m[k].same_shape(grads[k])) {
      throw DimensionError("adam_step: parameter " + std::to_string(k) + " is " +
                           params[k]->shape_string() + ", gradient is " +
                           grads[k].shape_string());
    }
    for (std::size_t i = 0; i < grads[k].size(); ++i) {
      if (!std::isfinite(grads[k][i])) {
        throw TrainingError("non-finite gradient " + std::to_string(grads[k][i]) +
                            " in parameter " + std::to_string(k) + " entry " +
                            std::to_string(i) + " at Adam step " +
                            std::to_string(state.t + 1));
      }
    }
  }

  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    Matrix& m = state.m[k];
    Matrix& v = state.v[k];
    const Matrix& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.epsilon);
    }
  }
}

}  // namespace fsr
