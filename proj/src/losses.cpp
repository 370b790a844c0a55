#include "fsr/losses.hpp"

#include <string>

#include "fsr/errors.hpp"

namespace fsr {
namespace {

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t models,
                  const char* what) {
  if (labels.size() != rows) {
    throw DimensionError(std::string(what) + ": " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(rows) + " rows");
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= models) {
      throw ConfigError(std::string(what) + ": no subgroup model for label " +
                        std::to_string(label));
    }
  }
}

// Row i of the result is per_group[labels[i]](i).
Var pick_rows(Tape& tape, std::span<const Var> per_group, std::span<const int> labels) {
  if (per_group.empty()) throw ConfigError("regularizer needs at least one subgroup model");
  Var acc = tape.mul(group_mask(tape, labels, 0), per_group[0]);
  for (std::size_t g = 1; g < per_group.size(); ++g) {
    acc = tape.add(acc, tape.mul(group_mask(tape, labels, static_cast<int>(g)), per_group[g]));
  }
  return acc;
}

}  // namespace

Var gaussian_nll_rows(Tape& tape, Var y, Var mean, Var logvar) {
  const Var sq = tape.square(tape.sub(y, mean));
  const Var scaled = tape.mul(sq, tape.exp(tape.negate(logvar)));
  return tape.scale(tape.shift(tape.add(logvar, scaled), kLog2Pi), 0.5);
}

Var gaussian_nll(Tape& tape, Var y, Var mean, Var logvar) {
  return tape.sum(gaussian_nll_rows(tape, y, mean, logvar));
}

Var group_mask(Tape& tape, std::span<const int> labels, int group) {
  Matrix mask(labels.size(), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) mask[i] = labels[i] == group ? 1.0 : 0.0;
  return tape.constant(std::move(mask));
}

Var subgroup_nll(Tape& tape, Var y, Var phi, const LinearVars& model,
                 std::span<const int> labels, int group) {
  if (labels.size() != tape.value(y).rows()) throw DimensionError("subgroup_nll: label count");
  const Var out = apply(tape, model, phi);
  const Var rows = gaussian_nll_rows(tape, y, tape.slice_cols(out, 0, 1),
                                     tape.slice_cols(out, 1, 1));
  return tape.sum(tape.mul(group_mask(tape, labels, group), rows));
}

Var suff_regularizer(Tape& tape, Var y, Var phi, std::span<const LinearVars> models,
                     std::span<const int> d, std::span<const int> dtilde) {
  const std::size_t n = tape.value(y).rows();
  check_labels(d, n, models.size(), "suff_regularizer");
  check_labels(dtilde, n, models.size(), "suff_regularizer");
  std::vector<Var> nll;
  nll.reserve(models.size());
  for (const LinearVars& m : models) {
    const Var out = apply(tape, m, phi);
    nll.push_back(gaussian_nll_rows(tape, y, tape.slice_cols(out, 0, 1),
                                    tape.slice_cols(out, 1, 1)));
  }
  return tape.sum(tape.sub(pick_rows(tape, nll, dtilde), pick_rows(tape, nll, d)));
}

Var mse_loss(Tape& tape, Var y, Var pred) { return tape.sum(tape.square(tape.sub(y, pred))); }

Var subgroup_predict(Tape& tape, Var phi, const LinearVars& model, OutputActivation activation) {
  const Var out = apply(tape, model, phi);
  return activation == OutputActivation::kSoftplus ? tape.softplus(out) : out;
}

Var subgroup_mse(Tape& tape, Var targets, Var phi, const LinearVars& model,
                 OutputActivation activation, std::span<const int> labels, int group) {
  if (labels.size() != tape.value(targets).rows()) {
    throw DimensionError("subgroup_mse: label count");
  }
  const Var sq = tape.square(tape.sub(targets, subgroup_predict(tape, phi, model, activation)));
  return tape.sum(tape.mul(group_mask(tape, labels, group), sq));
}

Var contrastive_mse_reg(Tape& tape, Var targets, Var phi, std::span<const LinearVars> models,
                        OutputActivation activation, std::span<const int> d,
                        std::span<const int> dtilde) {
  const std::size_t n = tape.value(targets).rows();
  check_labels(d, n, models.size(), "contrastive_mse_reg");
  check_labels(dtilde, n, models.size(), "contrastive_mse_reg");
  std::vector<Var> sq;
  sq.reserve(models.size());
  for (const LinearVars& m : models) {
    sq.push_back(tape.square(tape.sub(targets, subgroup_predict(tape, phi, m, activation))));
  }
  return tape.sum(tape.sub(pick_rows(tape, sq, dtilde), pick_rows(tape, sq, d)));
}

Matrix residual_targets(const Matrix& y, const Matrix& mean) {
  if (!y.same_shape(mean)) {
    throw DimensionError("residual_targets: " + y.shape_string() + " vs " + mean.shape_string());
  }
  Matrix r(y.rows(), y.cols());
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double e = y[i] - mean[i];
    r[i] = e * e;
  }
  return r;
}

}  // namespace fsr
