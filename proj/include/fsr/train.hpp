#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fsr/data.hpp"
#include "fsr/model.hpp"

namespace fsr {

enum class Algorithm {
  kHeteroSufficiency,    // heteroskedastic network + sufficiency regularizer
  kResidualCalibration,  // residual-based network + mean/variance calibration regularizers
};

std::string to_string(Algorithm algorithm);

struct TrainConfig {
  Algorithm algorithm = Algorithm::kHeteroSufficiency;
  /// Regularizer weight; the residual algorithm uses it for both stages.
  double lambda = 1.0;
  std::size_t epochs = 40;
  std::size_t batch_size = 128;
  double lr_init = 5e-3;
  std::size_t lr_decay_every = 2;
  double lr_decay_factor = 0.5;
  /// Unregularized epochs run before the main loop.
  std::size_t pretrain_epochs = 5;
  std::uint64_t seed = 0;
  std::size_t hidden_dim = 20;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// lr_init * lr_decay_factor ^ floor(epoch / lr_decay_every)
double lr_at(std::size_t epoch, const TrainConfig& config);

/// i.i.d. draws from the empirical marginal of `d`.
std::vector<int> draw_dtilde(std::span<const int> d, std::uint64_t seed);

struct EpochLog {
  std::string stage;  // "hetero", "mean" or "variance"
  std::string phase;  // "pretrain" or "main"
  std::size_t epoch = 0;
  double lr = 0.0;
  /// Per-sample average of the data-fit loss (NLL or squared error) seen
  /// during the feature-update pass.
  double loss = 0.0;
  /// Per-sample average of the regularizer over the same batches.
  double regularizer = 0.0;
};

enum class TrainPass {
  kSubgroupFit,    // updates only the per-group models
  kFeatureUpdate,  // updates only the representation and the shared heads
};

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(TrainPass, const HeteroskedasticBundle&)> after_hetero_pass;
  std::function<void(TrainPass, const ResidualBundle&)> after_residual_pass;
  /// Skips building the regularizer entirely (used to check that lambda = 0
  /// is the unregularized baseline).
  bool disable_regularizer = false;
};

/// Alternates per-group NLL fits with representation updates on
/// NLL + lambda * sufficiency regularizer, then head updates on NLL.
HeteroskedasticBundle train_algorithm1(const Dataset& dataset, const TrainConfig& config,
                                       const TrainHooks& hooks = {});

/// Trains the mean pipeline with the mean-calibration regularizer, then the
/// variance pipeline on squared residuals with the variance-calibration
/// regularizer.
ResidualBundle train_algorithm2(const Dataset& dataset, const TrainConfig& config,
                                const TrainHooks& hooks = {});

ModelBundle train(const Dataset& dataset, const TrainConfig& config,
                  const TrainHooks& hooks = {});

}  // namespace fsr
