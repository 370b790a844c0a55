#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fsr/losses.hpp"
#include "fsr/matrix.hpp"
#include "fsr/model.hpp"
#include "fsr/selective.hpp"
#include "fsr/tape.hpp"

namespace fsr::testing {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -2.0,
                     double hi = 2.0);
Linear random_linear(std::size_t in, std::size_t out, std::mt19937_64& rng);
MlpParams random_mlp(std::size_t p, std::size_t h, std::size_t q, std::mt19937_64& rng,
                     OutputActivation activation);

// --- finite differences -------------------------------------------------------

/// Records `params` as parameter leaves and returns the scalar loss.
using GraphBuilder = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheck {
  std::size_t entries = 0;
  std::size_t failures = 0;
  double worst_rel = 0.0;  // over entries outside the absolute band
  std::string worst;
};

/// Compares tape gradients with central differences, entry by entry. An entry
/// passes when |a - n| <= abs_tol or |a - n| / max(|a|, |n|) < rel_tol.
GradCheck check_gradients(const GraphBuilder& build, const std::vector<Matrix>& params,
                          double step = 1e-5, double rel_tol = 1e-4, double abs_tol = 1e-7);

/// Central difference of a scalar function.
double central_difference(const std::function<double(double)>& f, double x, double step = 1e-5);

// --- scalar loss oracles --------------------------------------------------------

/// -log N(y; mean, var) from the density formula.
double gaussian_nll_oracle(double y, double mean, double var);

// --- gradient-check fixture covering every training loss --------------------------

struct LossCase {
  std::string name;
  GraphBuilder build;
  std::vector<Matrix> params;
};

/// A random two-group batch with the seven losses of the training loops,
/// each checked against its own trainable parameters.
std::vector<LossCase> random_loss_cases(std::mt19937_64& rng, std::size_t n = 16,
                                        std::size_t p = 3, std::size_t h = 4);

// --- selective evaluation by brute force -------------------------------------------

struct BruteGroup {
  std::size_t total = 0;
  std::size_t accepted = 0;
  std::optional<double> mse;
};

struct BrutePoint {
  double tau = 0.0;
  double coverage = 0.0;
  std::optional<double> mse;
  std::map<int, BruteGroup> groups;
};

/// Filters rows one threshold at a time, for every distinct uncertainty.
std::vector<BrutePoint> brute_force_curve(std::span<const double> y, std::span<const double> pred,
                                          std::span<const double> uncertainty,
                                          std::span<const int> d);

/// Midpoint rule with `steps` rectangles over [lo, hi] on the piecewise-linear
/// interpolant of `samples`.
double riemann_area(std::span<const CurveSample> samples, double lo, double hi,
                    std::size_t steps = 200000);

}  // namespace fsr::testing
