#include "fsr/selective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <string>

#include "fsr/csv.hpp"
#include "fsr/errors.hpp"

namespace fsr {

Decision reject(double uncertainty, double tau) {
  return uncertainty <= tau ? Decision::kAccept : Decision::kReject;
}

namespace {

void check_lengths(std::span<const double> y, std::span<const double> pred,
                   std::span<const double> uncertainty, std::span<const int> d) {
  if (pred.size() != y.size() || uncertainty.size() != y.size() || d.size() != y.size()) {
    throw DimensionError("selective evaluation needs equally long y, prediction, uncertainty "
                         "and label sequences");
  }
}

struct Accumulator {
  std::size_t total = 0;
  std::size_t accepted = 0;
  double sum = 0.0;     // squared errors
  double sum_sq = 0.0;  // squared errors, squared

  std::optional<double> mse() const {
    if (accepted == 0) return std::nullopt;
    return sum / static_cast<double>(accepted);
  }

  std::optional<double> standard_error() const {
    if (accepted < 2) return std::nullopt;
    const double k = static_cast<double>(accepted);
    const double mean = sum / k;
    const double var = std::max(0.0, (sum_sq - k * mean * mean) / (k - 1.0));
    return std::sqrt(var / k);
  }
};

}  // namespace

SelectivePoint selective_mse(std::span<const double> y, std::span<const double> pred,
                             std::span<const double> uncertainty, std::span<const int> d,
                             double tau) {
  check_lengths(y, pred, uncertainty, d);
  Accumulator all;
  std::map<int, Accumulator> per_group;
  for (std::size_t i = 0; i < y.size(); ++i) {
    Accumulator& g = per_group[d[i]];
    ++all.total;
    ++g.total;
    if (reject(uncertainty[i], tau) == Decision::kReject) continue;
    const double e = y[i] - pred[i];
    const double e2 = e * e;
    for (Accumulator* acc : {&all, &g}) {
      ++acc->accepted;
      acc->sum += e2;
      acc->sum_sq += e2 * e2;
    }
  }

  SelectivePoint point;
  point.tau = tau;
  point.n_accepted = all.accepted;
  point.coverage = all.total ? static_cast<double>(all.accepted) / static_cast<double>(all.total)
                             : 0.0;
  point.mse = all.mse();
  for (const auto& [label, acc] : per_group) {
    point.groups[label] = GroupStats{
        acc.total, acc.accepted,
        static_cast<double>(acc.accepted) / static_cast<double>(acc.total), acc.mse(),
        acc.standard_error()};
  }
  return point;
}

SelectiveCurve sweep_curve(std::span<const double> y, std::span<const double> pred,
                           std::span<const double> uncertainty, std::span<const int> d,
                           std::size_t max_points) {
  check_lengths(y, pred, uncertainty, d);
  const std::size_t n = y.size();
  if (n < 2) throw ContractError("sweep_curve needs at least 2 samples");

  std::vector<double> sorted(uncertainty.begin(), uncertainty.end());
  std::sort(sorted.begin(), sorted.end());
  // (threshold, number of samples accepted at that threshold)
  std::vector<std::pair<double, std::size_t>> levels;
  for (std::size_t i = 0; i < n; ++i) {
    if (i + 1 == n || sorted[i + 1] != sorted[i]) levels.emplace_back(sorted[i], i + 1);
  }

  std::vector<double> thresholds;
  if (max_points == 0 || levels.size() <= max_points) {
    for (const auto& level : levels) thresholds.push_back(level.first);
  } else {
    auto it = levels.begin();
    for (std::size_t k = 1; k <= max_points; ++k) {
      // Smallest level whose count reaches ceil(k n / max_points).
      const std::size_t target = (k * n + max_points - 1) / max_points;
      it = std::find_if(it, levels.end(), [&](const auto& l) { return l.second >= target; });
      if (thresholds.empty() || thresholds.back() != it->first) thresholds.push_back(it->first);
    }
  }

  SelectiveCurve curve;
  const std::set<int> labels(d.begin(), d.end());
  curve.groups.assign(labels.begin(), labels.end());
  for (double tau : thresholds) curve.points.push_back(selective_mse(y, pred, uncertainty, d, tau));
  return curve;
}

const SelectivePoint& point_at_coverage(const SelectiveCurve& curve, double coverage) {
  if (curve.points.empty()) throw ContractError("point_at_coverage on an empty curve");
  for (const SelectivePoint& p : curve.points) {
    if (p.coverage >= coverage) return p;
  }
  return curve.points.back();
}

double interpolate(std::span<const CurveSample> s, double coverage) {
  if (s.empty()) throw ContractError("interpolate on an empty curve");
  if (coverage <= s.front().coverage) return s.front().value;
  if (coverage >= s.back().coverage) return s.back().value;
  const auto upper = std::upper_bound(
      s.begin(), s.end(), coverage,
      [](double c, const CurveSample& p) { return c < p.coverage; });
  const CurveSample& b = *upper;
  const CurveSample& a = *(upper - 1);
  const double t = (coverage - a.coverage) / (b.coverage - a.coverage);
  return a.value + t * (b.value - a.value);
}

std::optional<double> area_under(std::span<const CurveSample> s, double c_min, double c_max) {
  if (s.size() < 2) return std::nullopt;
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (!(s[i].coverage > s[i - 1].coverage)) {
      throw ContractError("area_under needs strictly increasing coverages");
    }
  }
  const double lo = std::max(c_min, s.front().coverage);
  const double hi = std::min(c_max, s.back().coverage);
  if (!(hi > lo)) return std::nullopt;

  std::vector<CurveSample> poly{{lo, interpolate(s, lo)}};
  for (const CurveSample& p : s) {
    if (p.coverage > lo && p.coverage < hi) poly.push_back(p);
  }
  poly.push_back({hi, interpolate(s, hi)});
  double area = 0.0;
  for (std::size_t i = 1; i < poly.size(); ++i) {
    area += 0.5 * (poly[i].value + poly[i - 1].value) * (poly[i].coverage - poly[i - 1].coverage);
  }
  return area;
}

std::vector<CurveSample> overall_samples(const SelectiveCurve& curve) {
  std::vector<CurveSample> out;
  for (const SelectivePoint& p : curve.points) {
    if (!p.mse) continue;
    if (!out.empty() && out.back().coverage == p.coverage) {
      out.back().value = *p.mse;
    } else {
      out.push_back({p.coverage, *p.mse});
    }
  }
  return out;
}

std::vector<CurveSample> group_samples(const SelectiveCurve& curve, int group) {
  std::vector<CurveSample> out;
  for (const SelectivePoint& p : curve.points) {
    const auto it = p.groups.find(group);
    if (it == p.groups.end() || !it->second.mse) continue;
    if (!out.empty() && out.back().coverage == it->second.coverage) {
      out.back().value = *it->second.mse;
    } else {
      out.push_back({it->second.coverage, *it->second.mse});
    }
  }
  return out;
}

std::vector<CurveSample> disparity_samples(const SelectiveCurve& curve) {
  std::vector<std::vector<CurveSample>> per_group;
  for (int g : curve.groups) {
    auto samples = group_samples(curve, g);
    if (!samples.empty()) per_group.push_back(std::move(samples));
  }
  std::vector<CurveSample> out;
  if (per_group.size() < 2) return out;
  for (const CurveSample& grid : overall_samples(curve)) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& samples : per_group) {
      const double v = interpolate(samples, grid.coverage);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    out.push_back({grid.coverage, hi - lo});
  }
  return out;
}

std::map<int, std::size_t> check_monotonic(const SelectiveCurve& curve, double tolerance,
                                           double se_multiplier) {
  std::map<int, std::size_t> violations;
  for (int g : curve.groups) {
    violations[g] = 0;
    const GroupStats* previous = nullptr;  // the neighbouring point at higher coverage
    for (auto it = curve.points.rbegin(); it != curve.points.rend(); ++it) {
      const auto found = it->groups.find(g);
      if (found == it->groups.end() || !found->second.mse) continue;
      const GroupStats& current = found->second;
      if (previous != nullptr) {
        double allowed = tolerance;
        bool comparable = true;
        if (se_multiplier > 0.0) {
          comparable = previous->mse_se.has_value() && current.mse_se.has_value();
          if (comparable) {
            allowed += se_multiplier * std::hypot(*previous->mse_se, *current.mse_se);
          }
        }
        if (comparable && *current.mse - *previous->mse > allowed) ++violations[g];
      }
      previous = &current;
    }
  }
  return violations;
}

FairnessReport fairness_report(const SelectiveCurve& curve, const EvalOptions& options) {
  FairnessReport report;
  const auto overall = overall_samples(curve);
  report.auc = area_under(overall, options.c_min);
  for (int g : curve.groups) {
    report.auc_per_group[g] = area_under(group_samples(curve, g), options.c_min);
  }
  const auto disparity = disparity_samples(curve);
  report.auadc = area_under(disparity, options.c_min);
  report.monotonicity_violations =
      check_monotonic(curve, options.monotonic_tolerance, options.se_multiplier);
  return report;
}

void write_curve_csv(const SelectiveCurve& curve, std::ostream& out) {
  out << "tau,coverage,mse";
  for (int g : curve.groups) out << ",coverage_" << g << ",mse_" << g;
  out << '\n';
  const auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : ""; };
  for (const SelectivePoint& p : curve.points) {
    out << format_double(p.tau) << ',' << format_double(p.coverage) << ',' << opt(p.mse);
    for (int g : curve.groups) {
      const auto it = p.groups.find(g);
      if (it == p.groups.end()) {
        out << ",,";
      } else {
        out << ',' << format_double(it->second.coverage) << ',' << opt(it->second.mse);
      }
    }
    out << '\n';
  }
}

nlohmann::json to_json(const FairnessReport& report) {
  const auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json j;
  j["auc"] = opt(report.auc);
  j["auc_per_group"] = nlohmann::json::object();
  for (const auto& [g, v] : report.auc_per_group) j["auc_per_group"][std::to_string(g)] = opt(v);
  j["auadc"] = opt(report.auadc);
  j["monotonicity_violations"] = nlohmann::json::object();
  for (const auto& [g, v] : report.monotonicity_violations) {
    j["monotonicity_violations"][std::to_string(g)] = v;
  }
  return j;
}

}  // namespace fsr
