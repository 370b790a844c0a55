#pragma once

#include <numbers>
#include <span>
#include <vector>

#include "fsr/matrix.hpp"
#include "fsr/model.hpp"
#include "fsr/tape.hpp"

namespace fsr {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// A training minibatch. `dtilde` holds the group labels resampled from the
/// empirical marginal of `d`, aligned row-by-row with `d`.
struct Batch {
  Matrix x;
  Matrix y;
  std::vector<int> d;
  std::vector<int> dtilde;

  std::size_t size() const { return y.rows(); }
};

/// Per-row Gaussian negative log likelihood, n x 1:
///   0.5 * (ln 2pi + logvar + (y - mean)^2 * exp(-logvar))
Var gaussian_nll_rows(Tape& tape, Var y, Var mean, Var logvar);
/// Sum of gaussian_nll_rows.
Var gaussian_nll(Tape& tape, Var y, Var mean, Var logvar);

/// Constant n x 1 indicator of rows whose label equals `group`.
Var group_mask(Tape& tape, std::span<const int> labels, int group);

/// Gaussian NLL of the rows in `group` under that group's (mean, logvar)
/// model applied to phi. Zero when the group is absent from the batch.
Var subgroup_nll(Tape& tape, Var y, Var phi, const LinearVars& model,
                 std::span<const int> labels, int group);

/// Sum over rows of NLL under the model of the resampled label minus NLL
/// under the model of the true label. Place `phi` as a parameter-dependent
/// node and the subgroup models as constants to route gradients to the
/// representation only.
Var suff_regularizer(Tape& tape, Var y, Var phi, std::span<const LinearVars> models,
                     std::span<const int> d, std::span<const int> dtilde);

/// Sum of squared residuals.
Var mse_loss(Tape& tape, Var y, Var pred);

/// Output of a subgroup regression model over phi, with optional softplus.
Var subgroup_predict(Tape& tape, Var phi, const LinearVars& model, OutputActivation activation);

/// Squared error of the rows in `group` under that group's model.
Var subgroup_mse(Tape& tape, Var targets, Var phi, const LinearVars& model,
                 OutputActivation activation, std::span<const int> labels, int group);

/// Sum over rows of squared error under the resampled-label model minus
/// squared error under the true-label model. `targets` is y for the mean
/// stage and the squared residuals for the variance stage.
Var contrastive_mse_reg(Tape& tape, Var targets, Var phi, std::span<const LinearVars> models,
                        OutputActivation activation, std::span<const int> d,
                        std::span<const int> dtilde);

/// Elementwise (y - mean)^2, detached from any graph.
Matrix residual_targets(const Matrix& y, const Matrix& mean);

}  // namespace fsr
