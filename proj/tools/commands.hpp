#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fsr/data.hpp"
#include "fsr/selective.hpp"
#include "fsr/train.hpp"

namespace fsr::cli {

enum class DatasetId { kToy, kInsurance, kCrime, kCrime3, kIhdpControl, kIhdpTreatment };

std::string to_string(DatasetId id);
/// Throws ConfigError for unknown names.
DatasetId parse_dataset(std::string_view name);
/// Hidden width used when --hidden is not given.
std::size_t default_hidden(DatasetId id);
/// File name looked up inside the data directory.
std::string default_file_name(DatasetId id);
/// $FSR_DATA_DIR, else ./data
std::filesystem::path default_data_dir();

/// Everything needed to reproduce a run from its input files.
struct RunManifest {
  DatasetId dataset = DatasetId::kToy;
  TrainConfig config;
  std::size_t toy_samples = 10000;
  double toy_minority = 0.1;
  double test_fraction = 0.2;
  std::optional<std::filesystem::path> input;  // absent for the toy dataset
  std::filesystem::path output_dir;
  /// file name -> hex SHA-256, for inputs and written artifacts
  std::map<std::string, std::string> hashes;
};

nlohmann::json to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::json& j);

std::string sha256_file(const std::filesystem::path& path);

/// Builds the processed train/test split the manifest describes. The data
/// and split seeds are the training seed.
Split load_split(const RunManifest& manifest);

/// Trains and writes manifest.json, model.bin and train_log.jsonl.
ModelBundle cmd_train(RunManifest manifest);

struct Evaluation {
  SelectiveCurve curve;
  FairnessReport report;
  double test_mse = 0.0;
};

/// Predicts on a test split and computes the curve and report.
Evaluation evaluate(const ModelBundle& model, const Dataset& test, const EvalOptions& options,
                    std::size_t max_points);

/// Reloads a run directory, evaluates on its test split and writes curve.csv
/// and report.json next to the model. Throws DimensionError if the model
/// does not match the dataset.
Evaluation cmd_evaluate(const std::filesystem::path& run_dir, const EvalOptions& options,
                        std::size_t max_points);

/// Oracle predictions on a fresh toy sample, scored with two uncertainty
/// rules. Writes curve_marginal.csv, curve_x1.csv and toy_report.json.
struct ToyDemo {
  Evaluation marginal;
  Evaluation x1_only;
};
ToyDemo toy_demo(std::uint64_t seed, std::size_t n, std::size_t max_points, double c_min);
ToyDemo cmd_toy_demo(std::uint64_t seed, std::size_t n, std::size_t max_points, double c_min,
                     const std::filesystem::path& out);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single run
  std::size_t count = 0;
};
/// Mean and standard deviation of auc, auadc and auc_d over runs, skipping
/// undefined values.
std::map<std::string, MetricSummary> summarize(const std::vector<FairnessReport>& reports);

/// Entry point shared by the fsr executable and the tests. Returns the exit
/// code; diagnostics go to stderr.
int run_cli(int argc, const char* const* argv);

}  // namespace fsr::cli
