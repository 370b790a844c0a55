#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "fsr/matrix.hpp"
#include "fsr/tape.hpp"

namespace fsr {

/// Dense layer: weight is in x out, bias is 1 x out.
struct Linear {
  Matrix weight;
  Matrix bias;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
  friend bool operator==(const Linear&, const Linear&) = default;
};

enum class OutputActivation { kLinear, kSoftplus };

/// One SELU hidden layer followed by an output layer.
struct MlpParams {
  Linear hidden;
  Linear output;
  OutputActivation activation = OutputActivation::kLinear;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// LeCun-normal weights (std 1/sqrt(fan_in)), zero biases.
Linear init_linear(std::size_t in, std::size_t out, std::uint64_t seed);
MlpParams init_params(std::size_t p, std::size_t h, std::size_t q, std::uint64_t seed,
                      OutputActivation activation = OutputActivation::kLinear);

/// Shared representation phi = selu(x W + b) with a mean head and a
/// log-variance head on top, plus one (mean, log-variance) linear model per
/// sensitive group that also reads phi.
struct HeteroskedasticBundle {
  Linear phi;
  Linear mean_head;
  Linear logvar_head;
  std::vector<Linear> subgroup;  // h x 2 each: column 0 mean, column 1 log-variance

  std::size_t input_dim() const { return phi.in_dim(); }
  std::size_t hidden_dim() const { return phi.out_dim(); }
  std::size_t num_groups() const { return subgroup.size(); }
  friend bool operator==(const HeteroskedasticBundle&, const HeteroskedasticBundle&) = default;
};

/// Independent mean and variance networks. Subgroup mean models are linear
/// over the mean representation; subgroup variance models are linear over
/// the variance representation followed by softplus.
struct ResidualBundle {
  MlpParams mean_net;
  MlpParams var_net;
  std::vector<Linear> subgroup_mean;  // h x 1
  std::vector<Linear> subgroup_var;   // h x 1

  std::size_t input_dim() const { return mean_net.hidden.in_dim(); }
  std::size_t hidden_dim() const { return mean_net.hidden.out_dim(); }
  std::size_t num_groups() const { return subgroup_mean.size(); }
  friend bool operator==(const ResidualBundle&, const ResidualBundle&) = default;
};

using ModelBundle = std::variant<HeteroskedasticBundle, ResidualBundle>;

HeteroskedasticBundle make_hetero_bundle(std::size_t p, std::size_t h, std::size_t groups,
                                         std::uint64_t seed);
ResidualBundle make_residual_bundle(std::size_t p, std::size_t h, std::size_t groups,
                                    std::uint64_t seed);

// --- tape-side building blocks ---------------------------------------------

struct LinearVars {
  Var weight;
  Var bias;
};

/// Records a layer's parameters on the tape, as parameters when `trainable`
/// and as constants otherwise.
LinearVars place(Tape& tape, const Linear& layer, bool trainable);
Var apply(Tape& tape, const LinearVars& layer, Var x);
/// selu(x W + b)
Var represent(Tape& tape, const LinearVars& layer, Var x);

struct HeteroVars {
  LinearVars phi;
  LinearVars mean_head;
  LinearVars logvar_head;
};

struct HeteroOutputs {
  Var mean;
  Var logvar;
  Var phi;
};

HeteroOutputs forward_hetero(Tape& tape, const HeteroVars& vars, Var x);

struct MlpVars {
  LinearVars hidden;
  LinearVars output;
  OutputActivation activation;
};

MlpVars place(Tape& tape, const MlpParams& params, bool trainable_hidden,
              bool trainable_output);

struct MlpOutputs {
  Var output;
  Var phi;
};

MlpOutputs forward_mlp(Tape& tape, const MlpVars& vars, Var x);

// --- plain evaluation --------------------------------------------------------

struct HeteroPrediction {
  Matrix mean;
  Matrix logvar;
  Matrix phi;

  /// exp(logvar)
  Matrix variance() const;
};

struct ResidualMeanPrediction {
  Matrix mean;
  Matrix phi1;
};

struct ResidualVarPrediction {
  Matrix var;
  Matrix phi2;
};

HeteroPrediction forward_hetero(const HeteroskedasticBundle& bundle, const Matrix& x);
ResidualMeanPrediction forward_residual_mean(const ResidualBundle& bundle, const Matrix& x);
ResidualVarPrediction forward_residual_var(const ResidualBundle& bundle, const Matrix& x);

/// Point prediction and uncertainty (variance) for any bundle.
struct Prediction {
  Matrix mean;
  Matrix variance;
};

Prediction predict(const ModelBundle& bundle, const Matrix& x);

// --- persistence -------------------------------------------------------------

/// Binary layout (little-endian):
///   "FSRMODEL" | u32 version | u32 kind (0 hetero, 1 residual) | u32 count |
///   count x { u32 name_len | name | u64 rows | u64 cols | rows*cols f64 }
std::string encode_model(const ModelBundle& bundle);
ModelBundle decode_model(const std::string& bytes);
void save_model(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);

}  // namespace fsr
