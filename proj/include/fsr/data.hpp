#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fsr/csv.hpp"
#include "fsr/matrix.hpp"

namespace fsr {

/// Features X (n x p), target y (n x 1) and sensitive labels d. The
/// sensitive attribute never appears among the features.
///
/// Datasets coming out of a preprocessing recipe may still carry pending
/// work that depends on train-split statistics (min-max scaling, mean
/// imputation of NaN entries). `split` resolves it.
struct Dataset {
  Matrix x;
  Matrix y;
  std::vector<int> d;
  std::vector<std::string> feature_names;
  std::vector<std::string> group_names;

  std::vector<std::size_t> minmax_features;
  bool minmax_target = false;
  std::vector<std::size_t> impute_features;

  std::size_t size() const { return y.rows(); }
  std::size_t num_features() const { return x.cols(); }
  /// max(group_names.size(), largest label + 1)
  std::size_t num_groups() const;
  std::vector<std::size_t> group_counts() const;
  Dataset subset(std::span<const std::size_t> rows) const;
};

struct SplitSpec {
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct ColumnRange {
  std::size_t column = 0;
  std::string name;
  double min = 0.0;
  double max = 0.0;
};

struct ImputedMean {
  std::size_t column = 0;
  std::string name;
  double mean = 0.0;
};

/// Train-split statistics applied to both halves of a split.
struct Normalization {
  std::vector<ColumnRange> features;
  std::optional<ColumnRange> target;
  std::vector<ImputedMean> imputed;
};

struct Split {
  Dataset train;
  Dataset test;
  Normalization normalization;
};

/// Seeded shuffle, then floor((1 - test_fraction) n) training rows. Pending
/// imputation and min-max scaling are fitted on the training rows only.
Split split(const Dataset& dataset, const SplitSpec& spec);

/// Applies pending imputation and scaling using statistics of the whole
/// dataset, for callers that do not split.
Dataset finalize(const Dataset& dataset);

// --- synthetic two-group example --------------------------------------------

enum class ToyNoise {
  kGroupSpecific,  // minority variance decreases in x2
  kShared,         // both groups follow the majority variance law
};

/// x1, x2 ~ U[0,1]; D ~ Bernoulli(p_minority); y = x1 + x2 + N(0, var_D(x)) with
/// var_0 = 0.1 x1 + 0.15 x2 and var_1 = 0.1 x1 + 0.15 (1 - x2).
Dataset gen_toy(std::size_t n, double p_minority, std::uint64_t seed,
                ToyNoise noise = ToyNoise::kGroupSpecific);

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Conditional mean and variance of y given (x1, x2, d).
Moments toy_oracle(double x1, double x2, int d, ToyNoise noise = ToyNoise::kGroupSpecific);
/// Var(Y | X) with D marginalized out. The group means coincide, so this is
/// the mixture of the group variances.
double toy_marginal_variance(double x1, double x2, double p_minority,
                             ToyNoise noise = ToyNoise::kGroupSpecific);
/// Var(Y | X1) with X2 and D marginalized out. Both noise laws average to
/// 0.075 over x2, and x2 itself contributes Var(x2) = 1/12.
double toy_x1_variance(double x1);

// --- tabular recipes ---------------------------------------------------------

Schema insurance_schema();
/// Needs racepctblack and ViolentCrimesPerPop; other columns are numeric
/// features unless they are one of the non-predictive identifiers.
Schema crime_schema();
/// Header optional: treatment, y_factual, y_cfactual, mu0, mu1, x1..x25.
Schema ihdp_schema();

/// D = 1 for male rows; half of them are dropped (seeded) before anything
/// else. smoker and region are one-hot encoded; age, bmi and charges are
/// min-max scaled at split time.
Dataset preprocess_insurance(const RawTable& raw, std::uint64_t seed);

enum class CrimeGrouping { kBinary, kTernary };

struct CrimeOptions {
  CrimeGrouping grouping = CrimeGrouping::kBinary;
  /// Feature columns with a larger fraction of missing entries are dropped;
  /// the remaining gaps are mean-imputed at split time.
  double max_missing_fraction = 0.5;
};

/// Group label from the black population percentage: binary is pct >= 20;
/// ternary is 2 for pct >= 20, 1 for 1 <= pct < 20, else 0.
int crime_group(double percent_black, CrimeGrouping grouping);

Dataset preprocess_crime(const RawTable& raw, const CrimeOptions& options = {});

enum class IhdpArm { kControl, kTreatment };

/// Rows of one arm; D = 1 when x7 (sex) is 1. x1..x6 and the outcome are
/// min-max scaled at split time.
Dataset preprocess_ihdp(const RawTable& raw, IhdpArm arm);

// --- cache output --------------------------------------------------------------

RawTable to_table(const Dataset& dataset);
/// Writes train.csv, test.csv and dataset.json (sizes, group counts,
/// feature names, normalization parameters) into `dir`.
void write_dataset_cache(const Split& split, const std::filesystem::path& dir);

}  // namespace fsr
