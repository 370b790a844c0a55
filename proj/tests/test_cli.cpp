#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "commands.hpp"
#include "fsr/csv.hpp"
#include "fsr/model.hpp"

namespace fsr::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "fsr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json read(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("fsr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::vector<std::string> quick_train(const fs::path& out, const std::string& algo = "hetero",
                                       const std::string& lambda = "1") {
    return {"train",   "--dataset",     "toy",  "--algo", algo,          "--lambda",
            lambda,    "--seed",        "7",    "--epochs", "3",         "--pretrain-epochs",
            "1",       "--toy-samples", "800",  "--out",  out.string()};
  }

  fs::path dir_;
};

TEST_F(CliTest, TrainWritesArtifacts) {
  ASSERT_EQ(run(quick_train(dir_ / "a")), 0);
  for (const char* f : {"manifest.json", "model.bin", "train_log.jsonl"}) {
    EXPECT_TRUE(fs::exists(dir_ / "a" / f)) << f;
  }
  const json m = read(dir_ / "a" / "manifest.json");
  EXPECT_EQ(m.at("mode"), "regularized");
  EXPECT_EQ(m.at("dataset"), "toy");
  EXPECT_EQ(m.at("config").at("hidden_dim"), 20);
  EXPECT_EQ(m.at("hashes").at("model.bin"), sha256_file(dir_ / "a" / "model.bin"));
  std::ifstream log(dir_ / "a" / "train_log.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line); ++lines) {
    const json rec = json::parse(line);
    EXPECT_TRUE(rec.contains("epoch") && rec.contains("lr") && rec.contains("loss") &&
                rec.contains("regularizer"));
  }
  EXPECT_EQ(lines, 4u);
}

TEST_F(CliTest, LambdaZeroIsRecordedAsBaseline) {
  ASSERT_EQ(run(quick_train(dir_ / "b", "residual", "0")), 0);
  EXPECT_EQ(read(dir_ / "b" / "manifest.json").at("mode"), "baseline");
}

TEST_F(CliTest, RerunGivesByteIdenticalModel) {
  ASSERT_EQ(run(quick_train(dir_ / "a")), 0);
  ASSERT_EQ(run(quick_train(dir_ / "b")), 0);
  EXPECT_EQ(slurp(dir_ / "a" / "model.bin"), slurp(dir_ / "b" / "model.bin"));
  EXPECT_EQ(slurp(dir_ / "a" / "train_log.jsonl"), slurp(dir_ / "b" / "train_log.jsonl"));
}

TEST_F(CliTest, EvaluateWritesCurveAndReport) {
  ASSERT_EQ(run(quick_train(dir_ / "a")), 0);
  ASSERT_EQ(run({"evaluate", "--run", (dir_ / "a").string(), "--points", "30"}), 0);
  const json report = read(dir_ / "a" / "report.json");
  for (const char* key : {"auc", "auc_per_group", "auadc", "monotonicity_violations"}) {
    EXPECT_TRUE(report.contains(key)) << key;
  }
  EXPECT_TRUE(report.at("auc_per_group").contains("0"));
  EXPECT_TRUE(report.at("auc_per_group").contains("1"));
  EXPECT_GE(report.at("auc").get<double>(), 0.0);
  EXPECT_GE(report.at("auadc").get<double>(), 0.0);

  Schema schema;
  schema.allow_extra_columns = true;
  const RawTable curve = load_csv(dir_ / "a" / "curve.csv", schema);
  EXPECT_EQ(curve.rows(), 30u);
  EXPECT_EQ(curve.column("coverage").reals.back(), 1.0);
  EXPECT_NEAR(curve.column("mse").reals.back(), report.at("test_mse").get<double>(), 1e-12);
  EXPECT_TRUE(curve.has_column("mse_1"));
}

TEST_F(CliTest, EvaluateRejectsMismatchedModel) {
  ASSERT_EQ(run(quick_train(dir_ / "a")), 0);
  save_model(ModelBundle(make_hetero_bundle(5, 3, 2, 0)), dir_ / "a" / "model.bin");
  EXPECT_NE(run({"evaluate", "--run", (dir_ / "a").string()}), 0);
}

TEST_F(CliTest, FailuresGiveNonZeroExit) {
  EXPECT_NE(run({"train", "--dataset", "insurance", "--input", "/nonexistent.csv", "--out",
                 (dir_ / "x").string()}),
            0);
  EXPECT_NE(run({"train", "--dataset", "nope", "--out", (dir_ / "x").string()}), 0);
  EXPECT_NE(run({"train", "--lambda", "-1", "--out", (dir_ / "x").string()}), 0);
  EXPECT_NE(run({"train", "--algo", "other"}), 0);
  EXPECT_NE(run({"evaluate", "--run", (dir_ / "missing").string()}), 0);
  EXPECT_NE(run({}), 0);
}

TEST_F(CliTest, DataDirectoryFromEnvironment) {
  setenv("FSR_DATA_DIR", "/some/where", 1);
  EXPECT_EQ(default_data_dir(), fs::path("/some/where"));
  unsetenv("FSR_DATA_DIR");
  EXPECT_EQ(default_data_dir(), fs::path("data"));
}

TEST_F(CliTest, SeedsProduceSummary) {
  ASSERT_EQ(run({"run", "--dataset", "toy", "--seeds", "1,2", "--epochs", "2", "--pretrain-epochs",
                 "0", "--toy-samples", "600", "--points", "20", "--out", dir_.string()}),
            0);
  EXPECT_TRUE(fs::exists(dir_ / "seed_1" / "report.json"));
  EXPECT_TRUE(fs::exists(dir_ / "seed_2" / "curve.csv"));
  const json s = read(dir_ / "summary.json");
  EXPECT_EQ(s.at("auc").at("runs"), 2);
  const double a1 = read(dir_ / "seed_1" / "report.json").at("auc").get<double>();
  const double a2 = read(dir_ / "seed_2" / "report.json").at("auc").get<double>();
  EXPECT_NEAR(s.at("auc").at("mean").get<double>(), 0.5 * (a1 + a2), 1e-15);
  EXPECT_NEAR(s.at("auc").at("std").get<double>(), std::abs(a1 - a2) / std::sqrt(2.0), 1e-15);
  EXPECT_NE(run({"run", "--seeds", "1,x", "--out", dir_.string()}), 0);
}

TEST_F(CliTest, ToyDemoReproducesTheDisparityPattern) {
  ASSERT_EQ(run({"toy-demo", "--seed", "3", "--out", dir_.string()}), 0);
  const json r = read(dir_ / "toy_report.json");
  const json& marginal = r.at("marginal");
  EXPECT_GT(marginal.at("minority_mse_at_cmin").get<double>(),
            marginal.at("minority_mse_full").get<double>());
  for (const char* g : {"0", "1"}) {
    EXPECT_EQ(r.at("x1_only").at("monotonicity_violations").at(g), 0) << g;
  }
  const std::string first = slurp(dir_ / "curve_marginal.csv");
  ASSERT_EQ(run({"toy-demo", "--seed", "3", "--out", (dir_ / "again").string()}), 0);
  EXPECT_EQ(slurp(dir_ / "again" / "curve_marginal.csv"), first);
  EXPECT_EQ(slurp(dir_ / "again" / "curve_x1.csv"), slurp(dir_ / "curve_x1.csv"));
}

TEST_F(CliTest, PrepareWritesCache) {
  ASSERT_EQ(run({"prepare", "--dataset", "toy", "--toy-samples", "100", "--out", dir_.string()}), 0);
  EXPECT_TRUE(fs::exists(dir_ / "train.csv"));
  EXPECT_EQ(read(dir_ / "dataset.json").at("n_train"), 80);
}

TEST(Summary, SkipsUndefinedValues) {
  FairnessReport a, b;
  a.auc = 1.0;
  b.auc = 3.0;
  a.auadc = 0.5;
  const auto s = summarize({a, b});
  EXPECT_EQ(s.at("auc").mean, 2.0);
  EXPECT_NEAR(s.at("auc").std, std::sqrt(2.0), 1e-15);
  EXPECT_EQ(s.at("auadc").count, 1u);
  EXPECT_EQ(s.at("auadc").std, 0.0);
}

TEST(Manifest, JsonRoundTrip) {
  RunManifest m;
  m.dataset = DatasetId::kCrime3;
  m.config.algorithm = Algorithm::kResidualCalibration;
  m.config.lambda = 0.25;
  m.config.seed = 99;
  m.input = "/data/communities.csv";
  m.output_dir = "/out";
  m.hashes["model.bin"] = "abc";
  const RunManifest back = manifest_from_json(to_json(m));
  EXPECT_EQ(to_json(back), to_json(m));
  EXPECT_EQ(default_hidden(parse_dataset("insurance")), 3u);
  EXPECT_EQ(default_hidden(parse_dataset("crime")), 50u);
  EXPECT_EQ(default_hidden(parse_dataset("ihdp-treatment")), 20u);
}

}  // namespace
}  // namespace fsr::cli
