#include "fsr/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fsr/errors.hpp"
#include "fsr/losses.hpp"
#include "fsr/optim.hpp"

namespace fsr {

std::string to_string(Algorithm algorithm) {
  return algorithm == Algorithm::kHeteroSufficiency ? "hetero" : "residual";
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(lr_init > 0.0)) throw ConfigError("initial learning rate must be positive");
  if (lr_decay_every == 0) throw ConfigError("lr decay interval must be positive");
  if (!(lr_decay_factor > 0.0)) throw ConfigError("lr decay factor must be positive");
  if (hidden_dim == 0) throw ConfigError("hidden dimension must be positive");
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  const auto halvings = static_cast<double>(epoch / config.lr_decay_every);
  return config.lr_init * std::pow(config.lr_decay_factor, halvings);
}

std::vector<int> draw_dtilde(std::span<const int> d, std::uint64_t seed) {
  if (d.empty()) throw ContractError("draw_dtilde needs at least one label");
  const int max_label = *std::max_element(d.begin(), d.end());
  std::vector<double> counts(static_cast<std::size_t>(max_label) + 1, 0.0);
  for (int label : d) {
    if (label < 0) throw ContractError("group labels must be non-negative");
    counts[static_cast<std::size_t>(label)] += 1.0;
  }
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> marginal(counts.begin(), counts.end());
  std::vector<int> out(d.size());
  for (int& label : out) label = marginal(rng);
  return out;
}

namespace {

// Number of groups, requiring every label in [0, G) to occur.
std::size_t checked_group_count(const Dataset& ds) {
  if (ds.size() == 0) throw ConfigError("cannot train on an empty dataset");
  if (ds.d.size() != ds.size()) throw ConfigError("label count does not match row count");
  const int max_label = *std::max_element(ds.d.begin(), ds.d.end());
  if (*std::min_element(ds.d.begin(), ds.d.end()) < 0) {
    throw ConfigError("group labels must be non-negative");
  }
  std::vector<std::size_t> counts(static_cast<std::size_t>(max_label) + 1, 0);
  for (int label : ds.d) ++counts[static_cast<std::size_t>(label)];
  for (std::size_t g = 0; g < counts.size(); ++g) {
    if (counts[g] == 0) {
      throw ConfigError("subgroup " + std::to_string(g) + " has no training samples");
    }
  }
  return counts.size();
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

struct BatchData {
  Matrix x;
  Matrix y;
  std::vector<int> d;
  std::vector<int> dtilde;
};

BatchData gather(const Matrix& x, const Matrix& y, std::span<const int> d,
                 std::span<const int> dtilde, std::span<const std::size_t> rows) {
  BatchData b{x.select_rows(rows), y.select_rows(rows), {}, {}};
  for (std::size_t r : rows) {
    b.d.push_back(d[r]);
    b.dtilde.push_back(dtilde[r]);
  }
  return b;
}

std::size_t count_label(std::span<const int> labels, int group) {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), group));
}

double checked(double value, const char* what) {
  if (!std::isfinite(value)) {
    throw TrainingError(std::string("training diverged: ") + what + " is " +
                        std::to_string(value));
  }
  return value;
}

void step(Tape& tape, Var loss, std::initializer_list<std::pair<Matrix*, Var>> params,
          AdamState& state, double lr) {
  tape.backward(loss);
  std::vector<Matrix*> targets;
  std::vector<Matrix> grads;
  for (const auto& [param, var] : params) {
    targets.push_back(param);
    grads.push_back(tape.grad(var));
  }
  adam_step(targets, grads, state, lr);
}

void step_linear(Tape& tape, Var loss, Linear& layer, const LinearVars& vars, AdamState& state,
                 double lr) {
  step(tape, loss, {{&layer.weight, vars.weight}, {&layer.bias, vars.bias}}, state, lr);
}

Matrix representation(const Linear& layer, const Matrix& x) {
  Tape tape;
  return tape.value(represent(tape, place(tape, layer, false), tape.constant(x)));
}

struct Phase {
  const char* name;
  std::size_t epochs;
  double lambda;
  bool regularized;
};

std::vector<Phase> phases(const TrainConfig& config, const TrainHooks& hooks) {
  return {{"pretrain", config.pretrain_epochs, 0.0, false},
          {"main", config.epochs, config.lambda, !hooks.disable_regularizer}};
}

}  // namespace

HeteroskedasticBundle train_algorithm1(const Dataset& ds, const TrainConfig& config,
                                       const TrainHooks& hooks) {
  config.validate();
  const std::size_t groups = checked_group_count(ds);
  std::mt19937_64 seeds(config.seed);
  HeteroskedasticBundle bundle =
      make_hetero_bundle(ds.num_features(), config.hidden_dim, groups, seeds());
  const std::vector<int> dtilde = draw_dtilde(ds.d, seeds());
  std::mt19937_64 order_rng(seeds());

  for (const Phase& phase : phases(config, hooks)) {
    std::vector<AdamState> subgroup_state(groups);
    AdamState phi_state;
    AdamState head_state;

    for (std::size_t epoch = 0; epoch < phase.epochs; ++epoch) {
      const double lr = lr_at(epoch, config);
      const auto batches = make_batches(ds.size(), config.batch_size, order_rng);

      // Per-group models on a frozen representation.
      for (const auto& rows : batches) {
        const BatchData b = gather(ds.x, ds.y, ds.d, dtilde, rows);
        const Matrix phi = representation(bundle.phi, b.x);
        for (std::size_t g = 0; g < groups; ++g) {
          const std::size_t n_g = count_label(b.d, static_cast<int>(g));
          if (n_g == 0) continue;
          Tape tape;
          const LinearVars w = place(tape, bundle.subgroup[g], true);
          const Var loss = tape.scale(
              subgroup_nll(tape, tape.constant(b.y), tape.constant(phi), w, b.d,
                           static_cast<int>(g)),
              1.0 / static_cast<double>(n_g));
          checked(tape.value(loss).item(), "subgroup NLL");
          step_linear(tape, loss, bundle.subgroup[g], w, subgroup_state[g], lr);
        }
      }
      if (hooks.after_hetero_pass) hooks.after_hetero_pass(TrainPass::kSubgroupFit, bundle);

      // Representation, then heads.
      double loss_sum = 0.0;
      double reg_sum = 0.0;
      for (const auto& rows : batches) {
        const BatchData b = gather(ds.x, ds.y, ds.d, dtilde, rows);
        const double inv_n = 1.0 / static_cast<double>(rows.size());
        {
          Tape tape;
          const Var x = tape.constant(b.x);
          const Var y = tape.constant(b.y);
          const HeteroVars vars{place(tape, bundle.phi, true),
                                place(tape, bundle.mean_head, false),
                                place(tape, bundle.logvar_head, false)};
          const HeteroOutputs out = forward_hetero(tape, vars, x);
          const Var nll = gaussian_nll(tape, y, out.mean, out.logvar);
          Var objective = nll;
          if (phase.regularized) {
            std::vector<LinearVars> models;
            for (const Linear& m : bundle.subgroup) models.push_back(place(tape, m, false));
            const Var reg = suff_regularizer(tape, y, out.phi, models, b.d, b.dtilde);
            reg_sum += checked(tape.value(reg).item(), "sufficiency regularizer");
            objective = tape.add(nll, tape.scale(reg, phase.lambda));
          }
          loss_sum += checked(tape.value(nll).item(), "Gaussian NLL");
          step_linear(tape, tape.scale(objective, inv_n), bundle.phi, vars.phi, phi_state, lr);
        }
        {
          Tape tape;
          const HeteroVars vars{place(tape, bundle.phi, false),
                                place(tape, bundle.mean_head, true),
                                place(tape, bundle.logvar_head, true)};
          const HeteroOutputs out = forward_hetero(tape, vars, tape.constant(b.x));
          const Var loss =
              tape.scale(gaussian_nll(tape, tape.constant(b.y), out.mean, out.logvar), inv_n);
          checked(tape.value(loss).item(), "Gaussian NLL");
          step(tape, loss,
               {{&bundle.mean_head.weight, vars.mean_head.weight},
                {&bundle.mean_head.bias, vars.mean_head.bias},
                {&bundle.logvar_head.weight, vars.logvar_head.weight},
                {&bundle.logvar_head.bias, vars.logvar_head.bias}},
               head_state, lr);
        }
      }
      if (hooks.after_hetero_pass) hooks.after_hetero_pass(TrainPass::kFeatureUpdate, bundle);
      if (hooks.on_epoch) {
        const double n = static_cast<double>(ds.size());
        hooks.on_epoch({"hetero", phase.name, epoch, lr, loss_sum / n, reg_sum / n});
      }
    }
  }
  return bundle;
}

namespace {

// One stage of the residual pipeline: `net` maps x to targets, `subgroup`
// holds the per-group heads over net's representation.
void train_residual_stage(const char* stage, MlpParams& net, std::vector<Linear>& subgroup,
                          const Matrix& x, const Matrix& targets, std::span<const int> d,
                          std::span<const int> dtilde, const TrainConfig& config,
                          const TrainHooks& hooks, const ResidualBundle& bundle,
                          std::mt19937_64& order_rng) {
  const std::size_t groups = subgroup.size();
  const OutputActivation activation = net.activation;
  for (const Phase& phase : phases(config, hooks)) {
    std::vector<AdamState> subgroup_state(groups);
    AdamState hidden_state;
    AdamState output_state;

    for (std::size_t epoch = 0; epoch < phase.epochs; ++epoch) {
      const double lr = lr_at(epoch, config);
      const auto batches = make_batches(x.rows(), config.batch_size, order_rng);

      for (const auto& rows : batches) {
        const BatchData b = gather(x, targets, d, dtilde, rows);
        const Matrix phi = representation(net.hidden, b.x);
        for (std::size_t g = 0; g < groups; ++g) {
          const std::size_t n_g = count_label(b.d, static_cast<int>(g));
          if (n_g == 0) continue;
          Tape tape;
          const LinearVars w = place(tape, subgroup[g], true);
          const Var loss = tape.scale(
              subgroup_mse(tape, tape.constant(b.y), tape.constant(phi), w, activation, b.d,
                           static_cast<int>(g)),
              1.0 / static_cast<double>(n_g));
          checked(tape.value(loss).item(), "subgroup squared error");
          step_linear(tape, loss, subgroup[g], w, subgroup_state[g], lr);
        }
      }
      if (hooks.after_residual_pass) hooks.after_residual_pass(TrainPass::kSubgroupFit, bundle);

      double loss_sum = 0.0;
      double reg_sum = 0.0;
      for (const auto& rows : batches) {
        const BatchData b = gather(x, targets, d, dtilde, rows);
        const double inv_n = 1.0 / static_cast<double>(rows.size());
        {
          Tape tape;
          const Var y = tape.constant(b.y);
          const MlpVars vars = place(tape, net, true, false);
          const MlpOutputs out = forward_mlp(tape, vars, tape.constant(b.x));
          const Var fit = mse_loss(tape, y, out.output);
          Var objective = fit;
          if (phase.regularized) {
            std::vector<LinearVars> models;
            for (const Linear& m : subgroup) models.push_back(place(tape, m, false));
            const Var reg =
                contrastive_mse_reg(tape, y, out.phi, models, activation, b.d, b.dtilde);
            reg_sum += checked(tape.value(reg).item(), "calibration regularizer");
            objective = tape.add(fit, tape.scale(reg, phase.lambda));
          }
          loss_sum += checked(tape.value(fit).item(), "squared error");
          step_linear(tape, tape.scale(objective, inv_n), net.hidden, vars.hidden, hidden_state,
                      lr);
        }
        {
          Tape tape;
          const MlpVars vars = place(tape, net, false, true);
          const MlpOutputs out = forward_mlp(tape, vars, tape.constant(b.x));
          const Var loss = tape.scale(mse_loss(tape, tape.constant(b.y), out.output), inv_n);
          checked(tape.value(loss).item(), "squared error");
          step_linear(tape, loss, net.output, vars.output, output_state, lr);
        }
      }
      if (hooks.after_residual_pass) {
        hooks.after_residual_pass(TrainPass::kFeatureUpdate, bundle);
      }
      if (hooks.on_epoch) {
        const double n = static_cast<double>(x.rows());
        hooks.on_epoch({stage, phase.name, epoch, lr, loss_sum / n, reg_sum / n});
      }
    }
  }
}

}  // namespace

ResidualBundle train_algorithm2(const Dataset& ds, const TrainConfig& config,
                                const TrainHooks& hooks) {
  config.validate();
  const std::size_t groups = checked_group_count(ds);
  std::mt19937_64 seeds(config.seed);
  ResidualBundle bundle =
      make_residual_bundle(ds.num_features(), config.hidden_dim, groups, seeds());
  const std::vector<int> dtilde = draw_dtilde(ds.d, seeds());
  std::mt19937_64 mean_order(seeds());
  std::mt19937_64 var_order(seeds());

  train_residual_stage("mean", bundle.mean_net, bundle.subgroup_mean, ds.x, ds.y, ds.d, dtilde,
                       config, hooks, bundle, mean_order);
  const Matrix residuals = residual_targets(ds.y, forward_residual_mean(bundle, ds.x).mean);
  train_residual_stage("variance", bundle.var_net, bundle.subgroup_var, ds.x, residuals, ds.d,
                       dtilde, config, hooks, bundle, var_order);
  return bundle;
}

ModelBundle train(const Dataset& dataset, const TrainConfig& config, const TrainHooks& hooks) {
  if (config.algorithm == Algorithm::kHeteroSufficiency) {
    return train_algorithm1(dataset, config, hooks);
  }
  return train_algorithm2(dataset, config, hooks);
}

}  // namespace fsr
