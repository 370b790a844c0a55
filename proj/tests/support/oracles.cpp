#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

namespace fsr::testing {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo,
                     double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = u(rng);
  return m;
}

Linear random_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {random_matrix(in, out, rng, -1.0, 1.0), random_matrix(1, out, rng, -0.5, 0.5)};
}

MlpParams random_mlp(std::size_t p, std::size_t h, std::size_t q, std::mt19937_64& rng,
                     OutputActivation activation) {
  return {random_linear(p, h, rng), random_linear(h, q, rng), activation};
}

GradCheck check_gradients(const GraphBuilder& build, const std::vector<Matrix>& params,
                          double step, double rel_tol, double abs_tol) {
  const auto evaluate = [&](const std::vector<Matrix>& values) {
    Tape tape;
    std::vector<Var> vars;
    for (const Matrix& m : values) vars.push_back(tape.parameter(m));
    return tape.value(build(tape, vars)).item();
  };

  Tape tape;
  std::vector<Var> vars;
  for (const Matrix& m : params) vars.push_back(tape.parameter(m));
  const Var loss = build(tape, vars);
  tape.backward(loss);

  GradCheck out;
  std::vector<Matrix> probe = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Matrix& analytic = tape.grad(vars[k]);
    for (std::size_t j = 0; j < params[k].size(); ++j) {
      const double original = params[k][j];
      probe[k][j] = original + step;
      const double plus = evaluate(probe);
      probe[k][j] = original - step;
      const double minus = evaluate(probe);
      probe[k][j] = original;

      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[j];
      const double diff = std::abs(a - numeric);
      ++out.entries;
      if (diff <= abs_tol) continue;
      const double rel = diff / std::max(std::abs(a), std::abs(numeric));
      if (rel > out.worst_rel) {
        out.worst_rel = rel;
        std::ostringstream s;
        s << "param " << k << " entry " << j << ": analytic " << a << " numeric " << numeric;
        out.worst = s.str();
      }
      if (!(rel < rel_tol)) ++out.failures;
    }
  }
  return out;
}

double central_difference(const std::function<double(double)>& f, double x, double step) {
  return (f(x + step) - f(x - step)) / (2.0 * step);
}

double gaussian_nll_oracle(double y, double mean, double var) {
  const double density =
      std::exp(-(y - mean) * (y - mean) / (2.0 * var)) / std::sqrt(2.0 * std::numbers::pi * var);
  return -std::log(density);
}

namespace {

LinearVars vars_of(std::span<const Var> v, std::size_t first) { return {v[first], v[first + 1]}; }

// SELU has a kink at 0; keep every preactivation far outside the probe step.
Linear selu_layer(const Matrix& x, std::size_t out, std::mt19937_64& rng) {
  constexpr double kMargin = 1e-3;
  for (;;) {
    Linear layer = random_linear(x.cols(), out, rng);
    const Matrix pre = matmul(x, layer.weight);
    bool clear = true;
    for (std::size_t i = 0; i < pre.rows() && clear; ++i) {
      for (std::size_t j = 0; j < out && clear; ++j) {
        clear = std::abs(pre(i, j) + layer.bias(0, j)) > kMargin;
      }
    }
    if (clear) return layer;
  }
}

}  // namespace

std::vector<LossCase> random_loss_cases(std::mt19937_64& rng, std::size_t n, std::size_t p,
                                        std::size_t h) {
  const Matrix x = random_matrix(n, p, rng);
  const Matrix y = random_matrix(n, 1, rng);
  std::vector<int> d(n), dtilde(n);
  std::bernoulli_distribution coin(0.4);
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = i < 2 ? static_cast<int>(i) : static_cast<int>(coin(rng));
    dtilde[i] = static_cast<int>(coin(rng));
  }

  const Linear phi = selu_layer(x, h, rng);
  const Linear mean_head = random_linear(h, 1, rng);
  const Linear logvar_head = random_linear(h, 1, rng);
  const std::vector<Linear> hetero_models{random_linear(h, 2, rng), random_linear(h, 2, rng)};
  const MlpParams mean_net{selu_layer(x, h, rng), random_linear(h, 1, rng),
                           OutputActivation::kLinear};
  const MlpParams var_net{selu_layer(x, h, rng), random_linear(h, 1, rng),
                          OutputActivation::kSoftplus};
  const std::vector<Linear> mean_models{random_linear(h, 1, rng), random_linear(h, 1, rng)};
  const std::vector<Linear> var_models{random_linear(h, 1, rng), random_linear(h, 1, rng)};
  const Matrix residuals = residual_targets(y, random_matrix(n, 1, rng));

  const auto constant_models = [](Tape& t, const std::vector<Linear>& models) {
    std::vector<LinearVars> out;
    for (const Linear& m : models) out.push_back(place(t, m, false));
    return out;
  };

  std::vector<LossCase> cases;

  cases.push_back({"L_G",
                   [=](Tape& t, std::span<const Var> v) {
                     const HeteroVars hv{vars_of(v, 0), vars_of(v, 2), vars_of(v, 4)};
                     const HeteroOutputs out = forward_hetero(t, hv, t.constant(x));
                     return gaussian_nll(t, t.constant(y), out.mean, out.logvar);
                   },
                   {phi.weight, phi.bias, mean_head.weight, mean_head.bias, logvar_head.weight,
                    logvar_head.bias}});

  cases.push_back({"L_d",
                   [=](Tape& t, std::span<const Var> v) {
                     const Var rep = represent(t, place(t, phi, false), t.constant(x));
                     const Var yv = t.constant(y);
                     return t.add(subgroup_nll(t, yv, rep, vars_of(v, 0), d, 0),
                                  subgroup_nll(t, yv, rep, vars_of(v, 2), d, 1));
                   },
                   {hetero_models[0].weight, hetero_models[0].bias, hetero_models[1].weight,
                    hetero_models[1].bias}});

  cases.push_back({"L_R",
                   [=](Tape& t, std::span<const Var> v) {
                     const Var rep = represent(t, vars_of(v, 0), t.constant(x));
                     const auto models = constant_models(t, hetero_models);
                     return suff_regularizer(t, t.constant(y), rep, models, d, dtilde);
                   },
                   {phi.weight, phi.bias}});

  cases.push_back({"L_S1",
                   [=](Tape& t, std::span<const Var> v) {
                     const MlpVars mv{vars_of(v, 0), vars_of(v, 2), OutputActivation::kLinear};
                     return mse_loss(t, t.constant(y), forward_mlp(t, mv, t.constant(x)).output);
                   },
                   {mean_net.hidden.weight, mean_net.hidden.bias, mean_net.output.weight,
                    mean_net.output.bias}});

  cases.push_back({"L_R1",
                   [=](Tape& t, std::span<const Var> v) {
                     const Var rep = represent(t, vars_of(v, 0), t.constant(x));
                     const auto models = constant_models(t, mean_models);
                     return contrastive_mse_reg(t, t.constant(y), rep, models,
                                                OutputActivation::kLinear, d, dtilde);
                   },
                   {mean_net.hidden.weight, mean_net.hidden.bias}});

  cases.push_back({"L_S2",
                   [=](Tape& t, std::span<const Var> v) {
                     const MlpVars mv{vars_of(v, 0), vars_of(v, 2), OutputActivation::kSoftplus};
                     return mse_loss(t, t.constant(residuals),
                                     forward_mlp(t, mv, t.constant(x)).output);
                   },
                   {var_net.hidden.weight, var_net.hidden.bias, var_net.output.weight,
                    var_net.output.bias}});

  cases.push_back({"L_R2",
                   [=](Tape& t, std::span<const Var> v) {
                     const Var rep = represent(t, vars_of(v, 0), t.constant(x));
                     const auto models = constant_models(t, var_models);
                     return contrastive_mse_reg(t, t.constant(residuals), rep, models,
                                                OutputActivation::kSoftplus, d, dtilde);
                   },
                   {var_net.hidden.weight, var_net.hidden.bias}});
  return cases;
}

std::vector<BrutePoint> brute_force_curve(std::span<const double> y, std::span<const double> pred,
                                          std::span<const double> uncertainty,
                                          std::span<const int> d) {
  const std::set<double> thresholds(uncertainty.begin(), uncertainty.end());
  std::vector<BrutePoint> out;
  for (double tau : thresholds) {
    BrutePoint point;
    point.tau = tau;
    std::size_t accepted = 0;
    double sum = 0.0;
    std::map<int, double> group_sum;
    for (std::size_t i = 0; i < y.size(); ++i) {
      BruteGroup& g = point.groups[d[i]];
      ++g.total;
      if (uncertainty[i] > tau) continue;
      const double sq = (y[i] - pred[i]) * (y[i] - pred[i]);
      ++accepted;
      sum += sq;
      ++g.accepted;
      group_sum[d[i]] += sq;
    }
    point.coverage = static_cast<double>(accepted) / static_cast<double>(y.size());
    if (accepted > 0) point.mse = sum / static_cast<double>(accepted);
    for (auto& [label, g] : point.groups) {
      if (g.accepted > 0) g.mse = group_sum[label] / static_cast<double>(g.accepted);
    }
    out.push_back(point);
  }
  return out;
}

double riemann_area(std::span<const CurveSample> samples, double lo, double hi,
                    std::size_t steps) {
  const auto value_at = [&](double c) {
    if (c <= samples.front().coverage) return samples.front().value;
    for (std::size_t i = 1; i < samples.size(); ++i) {
      if (c <= samples[i].coverage) {
        const CurveSample& a = samples[i - 1];
        const CurveSample& b = samples[i];
        return a.value + (b.value - a.value) * (c - a.coverage) / (b.coverage - a.coverage);
      }
    }
    return samples.back().value;
  };
  const double width = (hi - lo) / static_cast<double>(steps);
  double area = 0.0;
  for (std::size_t k = 0; k < steps; ++k) area += value_at(lo + (k + 0.5) * width) * width;
  return area;
}

}  // namespace fsr::testing
