#include "fsr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "fsr/errors.hpp"

namespace fsr {

std::size_t Dataset::num_groups() const {
  std::size_t groups = group_names.size();
  for (int label : d) groups = std::max(groups, static_cast<std::size_t>(label) + 1);
  return groups;
}

std::vector<std::size_t> Dataset::group_counts() const {
  std::vector<std::size_t> counts(num_groups(), 0);
  for (int label : d) ++counts[static_cast<std::size_t>(label)];
  return counts;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out = *this;
  out.x = x.select_rows(rows);
  out.y = y.select_rows(rows);
  out.d.clear();
  for (std::size_t r : rows) out.d.push_back(d.at(r));
  return out;
}

namespace {

void apply_imputation(Dataset& ds, const std::vector<ImputedMean>& means) {
  for (const ImputedMean& m : means) {
    for (std::size_t i = 0; i < ds.x.rows(); ++i) {
      if (std::isnan(ds.x(i, m.column))) ds.x(i, m.column) = m.mean;
    }
  }
}

double scale01(double v, const ColumnRange& r) {
  return r.max > r.min ? (v - r.min) / (r.max - r.min) : 0.0;
}

void apply_scaling(Dataset& ds, const Normalization& norm) {
  for (const ColumnRange& r : norm.features) {
    for (std::size_t i = 0; i < ds.x.rows(); ++i) ds.x(i, r.column) = scale01(ds.x(i, r.column), r);
  }
  if (norm.target) {
    for (std::size_t i = 0; i < ds.y.rows(); ++i) ds.y[i] = scale01(ds.y[i], *norm.target);
  }
}

Normalization fit(const Dataset& reference) {
  Normalization norm;
  for (std::size_t c : reference.impute_features) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < reference.x.rows(); ++i) {
      const double v = reference.x(i, c);
      if (!std::isnan(v)) {
        sum += v;
        ++count;
      }
    }
    norm.imputed.push_back({c, reference.feature_names.at(c), count ? sum / count : 0.0});
  }
  const auto range_of = [](std::size_t column, std::string name, auto&& values) {
    ColumnRange r{column, std::move(name), std::numeric_limits<double>::infinity(),
                  -std::numeric_limits<double>::infinity()};
    for (double v : values) {
      if (std::isnan(v)) continue;
      r.min = std::min(r.min, v);
      r.max = std::max(r.max, v);
    }
    if (r.min > r.max) r.min = r.max = 0.0;
    return r;
  };
  for (std::size_t c : reference.minmax_features) {
    std::vector<double> col(reference.x.rows());
    for (std::size_t i = 0; i < col.size(); ++i) col[i] = reference.x(i, c);
    norm.features.push_back(range_of(c, reference.feature_names.at(c), col));
  }
  if (reference.minmax_target) norm.target = range_of(0, "y", reference.y.data());
  return norm;
}

void resolve(Dataset& ds, const Normalization& norm) {
  apply_imputation(ds, norm.imputed);
  apply_scaling(ds, norm);
  ds.minmax_features.clear();
  ds.impute_features.clear();
  ds.minmax_target = false;
}

}  // namespace

Split split(const Dataset& dataset, const SplitSpec& spec) {
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0)) {
    throw ContractError("test fraction must lie strictly between 0 and 1");
  }
  const std::size_t n = dataset.size();
  if (n < 5) throw ContractError("split needs at least 5 rows, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train =
      static_cast<std::size_t>(std::floor((1.0 - spec.test_fraction) * static_cast<double>(n) + 1e-9));
  const std::span<const std::size_t> all(order);

  Split out;
  out.train = dataset.subset(all.first(n_train));
  out.test = dataset.subset(all.subspan(n_train));
  // Imputation is fitted first so that scaling ranges see complete columns.
  Normalization imputation = fit(out.train);
  apply_imputation(out.train, imputation.imputed);
  Normalization scaling = fit(out.train);
  out.normalization.imputed = std::move(imputation.imputed);
  out.normalization.features = std::move(scaling.features);
  out.normalization.target = std::move(scaling.target);
  resolve(out.train, out.normalization);
  resolve(out.test, out.normalization);
  return out;
}

Dataset finalize(const Dataset& dataset) {
  Dataset out = dataset;
  Normalization imputation = fit(out);
  apply_imputation(out, imputation.imputed);
  Normalization norm = fit(out);
  norm.imputed = std::move(imputation.imputed);
  resolve(out, norm);
  return out;
}

// --- synthetic -----------------------------------------------------------------

Moments toy_oracle(double x1, double x2, int d, ToyNoise noise) {
  const bool minority_law = d == 1 && noise == ToyNoise::kGroupSpecific;
  return {x1 + x2, 0.1 * x1 + 0.15 * (minority_law ? 1.0 - x2 : x2)};
}

double toy_marginal_variance(double x1, double x2, double p_minority, ToyNoise noise) {
  return (1.0 - p_minority) * toy_oracle(x1, x2, 0, noise).variance +
         p_minority * toy_oracle(x1, x2, 1, noise).variance;
}

double toy_x1_variance(double x1) {
  return 0.1 * x1 + 0.15 * 0.5 + 1.0 / 12.0;
}

Dataset gen_toy(std::size_t n, double p_minority, std::uint64_t seed, ToyNoise noise) {
  if (n == 0) throw ContractError("gen_toy needs n >= 1");
  if (!(p_minority >= 0.0 && p_minority <= 1.0)) {
    throw ContractError("p_minority must lie in [0, 1]");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::bernoulli_distribution minority(p_minority);
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset ds;
  ds.x = Matrix(n, 2);
  ds.y = Matrix(n, 1);
  ds.d.resize(n);
  ds.feature_names = {"x1", "x2"};
  ds.group_names = {"majority", "minority"};
  for (std::size_t i = 0; i < n; ++i) {
    const double x1 = unit(rng);
    const double x2 = unit(rng);
    const int d = minority(rng) ? 1 : 0;
    const Moments m = toy_oracle(x1, x2, d, noise);
    ds.x(i, 0) = x1;
    ds.x(i, 1) = x2;
    ds.d[i] = d;
    ds.y[i] = m.mean + std::sqrt(m.variance) * normal(rng);
  }
  return ds;
}

// --- tabular recipes -----------------------------------------------------------

namespace {

const std::vector<std::string> kSmoker = {"no", "yes"};
const std::vector<std::string> kRegion = {"northeast", "northwest", "southeast", "southwest"};
const std::set<std::string> kCrimeIdentifiers = {"state", "county", "community",
                                                 "communityname", "fold"};

}  // namespace

Schema insurance_schema() {
  Schema s;
  s.columns = {
      {"age", ColumnType::kReal, {}, false, true},
      {"sex", ColumnType::kCategorical, {"female", "male"}, false, true},
      {"bmi", ColumnType::kReal, {}, false, true},
      {"children", ColumnType::kReal, {}, false, true},
      {"smoker", ColumnType::kCategorical, kSmoker, false, true},
      {"region", ColumnType::kCategorical, kRegion, false, true},
      {"charges", ColumnType::kReal, {}, false, true},
  };
  return s;
}

Schema crime_schema() {
  Schema s;
  s.columns = {
      {"state", ColumnType::kReal, {}, true, false},
      {"county", ColumnType::kReal, {}, true, false},
      {"community", ColumnType::kReal, {}, true, false},
      {"communityname", ColumnType::kCategorical, {}, true, false},
      {"fold", ColumnType::kReal, {}, true, false},
      {"racepctblack", ColumnType::kReal, {}, false, true},
      {"ViolentCrimesPerPop", ColumnType::kReal, {}, false, true},
  };
  s.allow_extra_columns = true;
  s.extra_allow_missing = true;
  return s;
}

Schema ihdp_schema() {
  Schema s;
  s.header = HeaderMode::kAuto;
  s.columns = {
      {"treatment", ColumnType::kReal, {}, false, true},
      {"y_factual", ColumnType::kReal, {}, false, true},
      {"y_cfactual", ColumnType::kReal, {}, true, false},
      {"mu0", ColumnType::kReal, {}, true, false},
      {"mu1", ColumnType::kReal, {}, true, false},
  };
  for (int k = 1; k <= 25; ++k) {
    s.columns.push_back({"x" + std::to_string(k), ColumnType::kReal, {}, false, true});
  }
  return s;
}

Dataset preprocess_insurance(const RawTable& raw, std::uint64_t seed) {
  for (const auto& c : insurance_schema().columns) {
    if (!raw.has_column(c.name)) throw DataError("insurance: missing column '" + c.name + "'");
  }
  const auto& sex = raw.column("sex").labels;
  std::vector<std::size_t> male;
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    if (sex[i] == "male") male.push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(male.begin(), male.end(), rng);
  std::vector<bool> dropped(raw.rows(), false);
  for (std::size_t k = 0; k < male.size() / 2; ++k) dropped[male[k]] = true;

  Dataset ds;
  ds.feature_names = {"age", "bmi", "children"};
  for (const auto& s : kSmoker) ds.feature_names.push_back("smoker_" + s);
  for (const auto& r : kRegion) ds.feature_names.push_back("region_" + r);
  ds.group_names = {"female", "male"};
  ds.minmax_features = {0, 1};
  ds.minmax_target = true;

  const auto& age = raw.column("age").reals;
  const auto& bmi = raw.column("bmi").reals;
  const auto& children = raw.column("children").reals;
  const auto& smoker = raw.column("smoker").labels;
  const auto& region = raw.column("region").labels;
  const auto& charges = raw.column("charges").reals;

  std::vector<double> xs;
  std::vector<double> ys;
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    if (dropped[i]) continue;
    xs.insert(xs.end(), {age[i], bmi[i], children[i]});
    for (const auto& s : kSmoker) xs.push_back(smoker[i] == s ? 1.0 : 0.0);
    for (const auto& r : kRegion) xs.push_back(region[i] == r ? 1.0 : 0.0);
    ys.push_back(charges[i]);
    ds.d.push_back(sex[i] == "male" ? 1 : 0);
  }
  ds.x = Matrix(ys.size(), ds.feature_names.size(), std::move(xs));
  ds.y = Matrix::column(ys);
  return ds;
}

int crime_group(double percent_black, CrimeGrouping grouping) {
  if (percent_black >= 20.0) return grouping == CrimeGrouping::kBinary ? 1 : 2;
  if (grouping == CrimeGrouping::kTernary && percent_black >= 1.0) return 1;
  return 0;
}

Dataset preprocess_crime(const RawTable& raw, const CrimeOptions& options) {
  const auto& race = raw.column("racepctblack").reals;
  const auto& target = raw.column("ViolentCrimesPerPop").reals;
  // The public file stores fractions in [0, 1]; raw percentages are accepted too.
  const double max_race = race.empty() ? 0.0 : *std::max_element(race.begin(), race.end());
  const double to_percent = max_race <= 1.0 ? 100.0 : 1.0;

  std::vector<const Column*> features;
  for (const Column& c : raw.columns()) {
    if (kCrimeIdentifiers.contains(c.name) || c.name == "racepctblack" ||
        c.name == "ViolentCrimesPerPop") {
      continue;
    }
    if (c.type != ColumnType::kReal) throw DataError("crime: non-numeric column '" + c.name + "'");
    const auto missing = std::count_if(c.reals.begin(), c.reals.end(),
                                       [](double v) { return std::isnan(v); });
    if (raw.rows() > 0 &&
        static_cast<double>(missing) / static_cast<double>(raw.rows()) >
            options.max_missing_fraction) {
      continue;
    }
    features.push_back(&c);
  }

  Dataset ds;
  ds.group_names = options.grouping == CrimeGrouping::kBinary
                       ? std::vector<std::string>{"pct_black<20", "pct_black>=20"}
                       : std::vector<std::string>{"pct_black<1", "1<=pct_black<20",
                                                  "pct_black>=20"};
  ds.x = Matrix(raw.rows(), features.size());
  ds.y = Matrix(raw.rows(), 1);
  for (std::size_t j = 0; j < features.size(); ++j) {
    ds.feature_names.push_back(features[j]->name);
    bool any_missing = false;
    for (std::size_t i = 0; i < raw.rows(); ++i) {
      ds.x(i, j) = features[j]->reals[i];
      any_missing = any_missing || std::isnan(ds.x(i, j));
    }
    if (any_missing) ds.impute_features.push_back(j);
  }
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    if (std::isnan(target[i])) {
      throw DataError("crime: missing target in row " + std::to_string(i + 1));
    }
    if (std::isnan(race[i])) {
      throw DataError("crime: missing racepctblack in row " + std::to_string(i + 1));
    }
    ds.y[i] = target[i];
    ds.d.push_back(crime_group(race[i] * to_percent, options.grouping));
  }
  return ds;
}

Dataset preprocess_ihdp(const RawTable& raw, IhdpArm arm) {
  const auto& treatment = raw.column("treatment").reals;
  const auto& outcome = raw.column("y_factual").reals;
  const auto& sex = raw.column("x7").reals;
  std::vector<const Column*> features;
  Dataset ds;
  for (int k = 1; k <= 25; ++k) {
    if (k == 7) continue;
    features.push_back(&raw.column("x" + std::to_string(k)));
    ds.feature_names.push_back("x" + std::to_string(k));
  }
  ds.group_names = {"female", "male"};
  ds.minmax_features = {0, 1, 2, 3, 4, 5};
  ds.minmax_target = true;

  const double wanted = arm == IhdpArm::kTreatment ? 1.0 : 0.0;
  std::vector<double> xs;
  std::vector<double> ys;
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    if (treatment[i] != wanted) continue;
    for (const Column* c : features) xs.push_back(c->reals[i]);
    ys.push_back(outcome[i]);
    ds.d.push_back(sex[i] == 1.0 ? 1 : 0);
  }
  ds.x = Matrix(ys.size(), features.size(), std::move(xs));
  ds.y = Matrix::column(ys);
  return ds;
}

// --- cache ---------------------------------------------------------------------

RawTable to_table(const Dataset& dataset) {
  std::vector<Column> cols;
  for (std::size_t j = 0; j < dataset.num_features(); ++j) {
    Column c{dataset.feature_names.at(j), ColumnType::kReal, {}, {}};
    for (std::size_t i = 0; i < dataset.size(); ++i) c.reals.push_back(dataset.x(i, j));
    cols.push_back(std::move(c));
  }
  Column y{"y", ColumnType::kReal, std::vector<double>(dataset.y.data().begin(),
                                                        dataset.y.data().end()), {}};
  Column d{"d", ColumnType::kReal, {}, {}};
  for (int label : dataset.d) d.reals.push_back(label);
  cols.push_back(std::move(y));
  cols.push_back(std::move(d));
  return RawTable(std::move(cols), dataset.size());
}

void write_dataset_cache(const Split& split, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_csv(to_table(split.train), dir / "train.csv");
  write_csv(to_table(split.test), dir / "test.csv");

  nlohmann::json meta;
  meta["n"] = split.train.size() + split.test.size();
  meta["n_train"] = split.train.size();
  meta["n_test"] = split.test.size();
  auto train_counts = split.train.group_counts();
  auto test_counts = split.test.group_counts();
  std::vector<std::size_t> counts(std::max(train_counts.size(), test_counts.size()), 0);
  for (std::size_t g = 0; g < train_counts.size(); ++g) counts[g] += train_counts[g];
  for (std::size_t g = 0; g < test_counts.size(); ++g) counts[g] += test_counts[g];
  meta["group_counts"] = counts;
  meta["group_names"] = split.train.group_names;
  meta["feature_names"] = split.train.feature_names;
  nlohmann::json norm;
  norm["features"] = nlohmann::json::array();
  for (const auto& r : split.normalization.features) {
    norm["features"].push_back({{"name", r.name}, {"min", r.min}, {"max", r.max}});
  }
  if (split.normalization.target) {
    norm["target"] = {{"min", split.normalization.target->min},
                      {"max", split.normalization.target->max}};
  } else {
    norm["target"] = nullptr;
  }
  norm["imputed"] = nlohmann::json::array();
  for (const auto& m : split.normalization.imputed) {
    norm["imputed"].push_back({{"name", m.name}, {"mean", m.mean}});
  }
  meta["normalization"] = norm;
  std::ofstream out(dir / "dataset.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "dataset.json").string());
  out << meta.dump(2) << '\n';
}

}  // namespace fsr
