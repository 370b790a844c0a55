#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

namespace fsr {

enum class Decision { kAccept, kReject };

/// Accept iff uncertainty <= tau.
Decision reject(double uncertainty, double tau);

struct GroupStats {
  std::size_t n_total = 0;
  std::size_t n_accepted = 0;
  double coverage = 0.0;
  /// Absent when no sample of the group is accepted.
  std::optional<double> mse;
  /// Standard error of `mse`; absent below two accepted samples.
  std::optional<double> mse_se;
};

struct SelectivePoint {
  double tau = 0.0;
  double coverage = 0.0;
  std::size_t n_accepted = 0;
  /// Absent when nothing is accepted.
  std::optional<double> mse;
  std::map<int, GroupStats> groups;
};

/// Empirical coverage and selective MSE at one threshold, overall and for
/// every label that occurs in `d`.
SelectivePoint selective_mse(std::span<const double> y, std::span<const double> pred,
                             std::span<const double> uncertainty, std::span<const int> d,
                             double tau);

/// Points ordered by increasing threshold (hence increasing coverage).
struct SelectiveCurve {
  std::vector<SelectivePoint> points;
  std::vector<int> groups;
};

/// Thresholds are the distinct uncertainty values, so each point is one
/// achievable coverage level and tied uncertainties are accepted together.
/// With `max_points` > 0 the thresholds are thinned to the smallest ones
/// reaching coverage k / max_points, k = 1..max_points; the last point
/// always has coverage 1. Each point costs one pass over the data.
SelectiveCurve sweep_curve(std::span<const double> y, std::span<const double> pred,
                           std::span<const double> uncertainty, std::span<const int> d,
                           std::size_t max_points = 0);

/// First point whose overall coverage reaches `coverage`. Throws
/// ContractError on an empty curve.
const SelectivePoint& point_at_coverage(const SelectiveCurve& curve, double coverage);

struct CurveSample {
  double coverage = 0.0;
  double value = 0.0;
};

/// Trapezoidal area of a piecewise-linear curve over
/// [max(c_min, first coverage), min(c_max, last coverage)], interpolating at
/// the edges. Coverages must be strictly increasing. Empty when the range has
/// no width.
std::optional<double> area_under(std::span<const CurveSample> samples, double c_min = 0.2,
                                 double c_max = 1.0);

/// Linear interpolation, constant beyond either end.
double interpolate(std::span<const CurveSample> samples, double coverage);

/// (coverage, mse) of the whole population, skipping points without an MSE.
std::vector<CurveSample> overall_samples(const SelectiveCurve& curve);
/// (coverage_d, mse_d) for one group; repeated coverages keep the last point.
std::vector<CurveSample> group_samples(const SelectiveCurve& curve, int group);
/// max_d mse_d - min_d mse_d with every group curve interpolated on the
/// overall coverage grid. For two groups this is |mse_0 - mse_1|.
std::vector<CurveSample> disparity_samples(const SelectiveCurve& curve);

/// Per group, the number of adjacent pairs (walking towards lower coverage)
/// where the group MSE rises by more than
///   tolerance + se_multiplier * sqrt(se_a^2 + se_b^2).
/// Pairs lacking a standard error are skipped when se_multiplier > 0.
std::map<int, std::size_t> check_monotonic(const SelectiveCurve& curve, double tolerance,
                                           double se_multiplier = 0.0);

struct FairnessReport {
  std::optional<double> auc;
  std::map<int, std::optional<double>> auc_per_group;
  std::optional<double> auadc;
  std::map<int, std::size_t> monotonicity_violations;
};

struct EvalOptions {
  double c_min = 0.2;
  double monotonic_tolerance = 0.0;
  double se_multiplier = 0.0;
};

FairnessReport fairness_report(const SelectiveCurve& curve, const EvalOptions& options = {});

/// Header: tau,coverage,mse,coverage_<d>,mse_<d> for every group. Absent
/// values are written as empty fields.
void write_curve_csv(const SelectiveCurve& curve, std::ostream& out);
nlohmann::json to_json(const FairnessReport& report);

}  // namespace fsr
