#include "commands.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "fsr/errors.hpp"
#include "fsr/model.hpp"

namespace fsr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct DatasetInfo {
  DatasetId id;
  const char* name;
  const char* file;
  std::size_t hidden;
};

constexpr DatasetInfo kDatasets[] = {
    {DatasetId::kToy, "toy", "", 20},
    {DatasetId::kInsurance, "insurance", "insurance.csv", 3},
    {DatasetId::kCrime, "crime", "communities.csv", 50},
    {DatasetId::kCrime3, "crime3", "communities.csv", 50},
    {DatasetId::kIhdpControl, "ihdp-control", "ihdp.csv", 20},
    {DatasetId::kIhdpTreatment, "ihdp-treatment", "ihdp.csv", 20},
};

const DatasetInfo& info(DatasetId id) {
  for (const auto& d : kDatasets) {
    if (d.id == id) return d;
  }
  throw ContractError("unknown dataset id");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string to_string(DatasetId id) { return info(id).name; }

DatasetId parse_dataset(std::string_view name) {
  for (const auto& d : kDatasets) {
    if (name == d.name) return d.id;
  }
  throw ConfigError("unknown dataset '" + std::string(name) +
                    "' (toy, insurance, crime, crime3, ihdp-control, ihdp-treatment)");
}

std::size_t default_hidden(DatasetId id) { return info(id).hidden; }
std::string default_file_name(DatasetId id) { return info(id).file; }

fs::path default_data_dir() {
  if (const char* env = std::getenv("FSR_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return "data";
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buffer[1 << 16];
  while (in.read(buffer, sizeof buffer) || in.gcount() > 0) {
    EVP_DigestUpdate(ctx, buffer, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_DigestFinal_ex(ctx, digest, &length);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < length; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

json to_json(const RunManifest& m) {
  const TrainConfig& c = m.config;
  json j;
  j["dataset"] = to_string(m.dataset);
  j["mode"] = c.lambda == 0.0 ? "baseline" : "regularized";
  j["config"] = {{"algorithm", to_string(c.algorithm)},
                 {"lambda", c.lambda},
                 {"epochs", c.epochs},
                 {"batch_size", c.batch_size},
                 {"lr_init", c.lr_init},
                 {"lr_decay_every", c.lr_decay_every},
                 {"lr_decay_factor", c.lr_decay_factor},
                 {"pretrain_epochs", c.pretrain_epochs},
                 {"seed", c.seed},
                 {"hidden_dim", c.hidden_dim}};
  j["split"] = {{"test_fraction", m.test_fraction}, {"seed", c.seed}};
  if (m.dataset == DatasetId::kToy) {
    j["toy"] = {{"samples", m.toy_samples}, {"p_minority", m.toy_minority}};
  }
  j["input"] = m.input ? json(m.input->string()) : json(nullptr);
  j["output_dir"] = m.output_dir.string();
  j["hashes"] = m.hashes;
  return j;
}

RunManifest manifest_from_json(const json& j) {
  try {
    RunManifest m;
    m.dataset = parse_dataset(j.at("dataset").get<std::string>());
    const json& c = j.at("config");
    const auto algo = c.at("algorithm").get<std::string>();
    if (algo == "hetero") {
      m.config.algorithm = Algorithm::kHeteroSufficiency;
    } else if (algo == "residual") {
      m.config.algorithm = Algorithm::kResidualCalibration;
    } else {
      throw ConfigError("unknown algorithm '" + algo + "'");
    }
    m.config.lambda = c.at("lambda").get<double>();
    m.config.epochs = c.at("epochs").get<std::size_t>();
    m.config.batch_size = c.at("batch_size").get<std::size_t>();
    m.config.lr_init = c.at("lr_init").get<double>();
    m.config.lr_decay_every = c.at("lr_decay_every").get<std::size_t>();
    m.config.lr_decay_factor = c.at("lr_decay_factor").get<double>();
    m.config.pretrain_epochs = c.at("pretrain_epochs").get<std::size_t>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    m.config.hidden_dim = c.at("hidden_dim").get<std::size_t>();
    m.test_fraction = j.at("split").at("test_fraction").get<double>();
    if (j.contains("toy")) {
      m.toy_samples = j["toy"].at("samples").get<std::size_t>();
      m.toy_minority = j["toy"].at("p_minority").get<double>();
    }
    if (!j.at("input").is_null()) m.input = j["input"].get<std::string>();
    m.output_dir = j.at("output_dir").get<std::string>();
    m.hashes = j.at("hashes").get<std::map<std::string, std::string>>();
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
}

Split load_split(const RunManifest& m) {
  const SplitSpec spec{m.test_fraction, m.config.seed};
  if (m.dataset == DatasetId::kToy) {
    return split(gen_toy(m.toy_samples, m.toy_minority, m.config.seed), spec);
  }
  if (!m.input) throw ConfigError(to_string(m.dataset) + " needs an input CSV");
  if (!fs::exists(*m.input)) throw DataError("input file not found: " + m.input->string());
  switch (m.dataset) {
    case DatasetId::kInsurance:
      return split(preprocess_insurance(load_csv(*m.input, insurance_schema()), m.config.seed),
                   spec);
    case DatasetId::kCrime:
      return split(preprocess_crime(load_csv(*m.input, crime_schema()), {}), spec);
    case DatasetId::kCrime3:
      return split(preprocess_crime(load_csv(*m.input, crime_schema()),
                                    {CrimeGrouping::kTernary, 0.5}),
                   spec);
    case DatasetId::kIhdpControl:
      return split(preprocess_ihdp(load_csv(*m.input, ihdp_schema()), IhdpArm::kControl), spec);
    case DatasetId::kIhdpTreatment:
      return split(preprocess_ihdp(load_csv(*m.input, ihdp_schema()), IhdpArm::kTreatment),
                   spec);
    case DatasetId::kToy:
      break;
  }
  throw ContractError("unhandled dataset id");
}

ModelBundle cmd_train(RunManifest m) {
  m.config.validate();
  fs::create_directories(m.output_dir);
  m.hashes.clear();
  if (m.input) m.hashes["input:" + m.input->filename().string()] = sha256_file(*m.input);

  const Split data = load_split(m);
  const fs::path log_path = m.output_dir / "train_log.jsonl";
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw DataError("cannot write " + log_path.string());
  TrainHooks hooks;
  hooks.on_epoch = [&log](const EpochLog& e) {
    json line{{"stage", e.stage}, {"phase", e.phase},     {"epoch", e.epoch},
              {"lr", e.lr},       {"loss", e.loss},       {"regularizer", e.regularizer}};
    log << line.dump() << '\n';
  };
  const ModelBundle model = train(data.train, m.config, hooks);
  log.close();

  const fs::path model_path = m.output_dir / "model.bin";
  save_model(model, model_path);
  m.hashes["model.bin"] = sha256_file(model_path);
  m.hashes["train_log.jsonl"] = sha256_file(log_path);
  const fs::path manifest_path = m.output_dir / "manifest.json";
  write_text(manifest_path, to_json(m).dump(2) + "\n");

  // Read everything back before reporting success.
  if (!(load_model(model_path) == model)) throw DataError("model file did not round-trip");
  manifest_from_json(read_json(manifest_path));
  std::ifstream check(log_path);
  for (std::string line; std::getline(check, line);) {
    if (!json::accept(line)) throw DataError("unreadable line in " + log_path.string());
  }
  return model;
}

Evaluation evaluate(const ModelBundle& model, const Dataset& test, const EvalOptions& options,
                    std::size_t max_points) {
  const std::size_t input_dim =
      std::visit([](const auto& b) { return b.input_dim(); }, model);
  if (input_dim != test.num_features()) {
    throw DimensionError("model expects " + std::to_string(input_dim) + " features, dataset has " +
                         std::to_string(test.num_features()));
  }
  const Prediction pred = predict(model, test.x);
  Evaluation out;
  out.curve = sweep_curve(test.y.data(), pred.mean.data(), pred.variance.data(), test.d,
                          max_points);
  out.report = fairness_report(out.curve, options);
  double sum = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const double e = test.y[i] - pred.mean[i];
    sum += e * e;
  }
  out.test_mse = sum / static_cast<double>(test.size());
  return out;
}

namespace {

json report_document(const Evaluation& e, const EvalOptions& options, std::size_t points) {
  json j = to_json(e.report);
  j["test_mse"] = e.test_mse;
  j["c_min"] = options.c_min;
  j["points"] = points;
  j["monotonic_tolerance"] = options.monotonic_tolerance;
  j["se_multiplier"] = options.se_multiplier;
  return j;
}

void write_curve(const SelectiveCurve& curve, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  write_curve_csv(curve, out);
  if (!out) throw DataError("cannot write " + path.string());
}

void check_curve_file(const fs::path& path, std::size_t expected_rows) {
  Schema schema;
  schema.allow_extra_columns = true;
  if (load_csv(path, schema).rows() != expected_rows) {
    throw DataError(path.string() + " did not parse back");
  }
}

}  // namespace

Evaluation cmd_evaluate(const fs::path& run_dir, const EvalOptions& options,
                        std::size_t max_points) {
  const RunManifest m = manifest_from_json(read_json(run_dir / "manifest.json"));
  const ModelBundle model = load_model(run_dir / "model.bin");
  const Evaluation e = evaluate(model, load_split(m).test, options, max_points);

  write_curve(e.curve, run_dir / "curve.csv");
  write_text(run_dir / "report.json", report_document(e, options, max_points).dump(2) + "\n");
  check_curve_file(run_dir / "curve.csv", e.curve.points.size());
  read_json(run_dir / "report.json");
  return e;
}

ToyDemo toy_demo(std::uint64_t seed, std::size_t n, std::size_t max_points, double c_min) {
  constexpr double kMinority = 0.1;
  const Dataset ds = gen_toy(n, kMinority, seed);
  std::vector<double> mean(n), marginal(n), x1_only(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x1 = ds.x(i, 0);
    const double x2 = ds.x(i, 1);
    mean[i] = toy_oracle(x1, x2, ds.d[i]).mean;
    marginal[i] = toy_marginal_variance(x1, x2, kMinority);
    x1_only[i] = toy_x1_variance(x1);
  }
  const EvalOptions options{c_min, 0.0, 3.0};
  const auto score = [&](const std::vector<double>& uncertainty) {
    Evaluation e;
    e.curve = sweep_curve(ds.y.data(), mean, uncertainty, ds.d, max_points);
    e.report = fairness_report(e.curve, options);
    e.test_mse = *e.curve.points.back().mse;
    return e;
  };
  return {score(marginal), score(x1_only)};
}

ToyDemo cmd_toy_demo(std::uint64_t seed, std::size_t n, std::size_t max_points, double c_min,
                     const fs::path& out) {
  ToyDemo demo = toy_demo(seed, n, max_points, c_min);
  fs::create_directories(out);
  write_curve(demo.marginal.curve, out / "curve_marginal.csv");
  write_curve(demo.x1_only.curve, out / "curve_x1.csv");
  const EvalOptions options{c_min, 0.0, 3.0};
  json j;
  j["seed"] = seed;
  j["samples"] = n;
  for (const auto& [key, e] : {std::pair{"marginal", &demo.marginal}, {"x1_only", &demo.x1_only}}) {
    json entry = report_document(*e, options, max_points);
    const auto& low = point_at_coverage(e->curve, c_min);
    const auto& full = e->curve.points.back();
    entry["minority_mse_at_cmin"] = optional_json(low.groups.at(1).mse);
    entry["minority_mse_full"] = optional_json(full.groups.at(1).mse);
    j[key] = entry;
  }
  write_text(out / "toy_report.json", j.dump(2) + "\n");
  check_curve_file(out / "curve_marginal.csv", demo.marginal.curve.points.size());
  check_curve_file(out / "curve_x1.csv", demo.x1_only.curve.points.size());
  read_json(out / "toy_report.json");
  return demo;
}

std::map<std::string, MetricSummary> summarize(const std::vector<FairnessReport>& reports) {
  std::map<std::string, std::vector<double>> values;
  for (const FairnessReport& r : reports) {
    if (r.auc) values["auc"].push_back(*r.auc);
    if (r.auadc) values["auadc"].push_back(*r.auadc);
    for (const auto& [g, v] : r.auc_per_group) {
      if (v) values["auc_d" + std::to_string(g)].push_back(*v);
    }
  }
  std::map<std::string, MetricSummary> out;
  for (const auto& [name, xs] : values) {
    MetricSummary s;
    s.count = xs.size();
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
      double ss = 0.0;
      for (double x : xs) ss += (x - s.mean) * (x - s.mean);
      s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    out[name] = s;
  }
  return out;
}

namespace {

struct TrainOptions {
  std::string dataset = "toy";
  std::string algo = "hetero";
  double lambda = 1.0;
  std::uint64_t seed = 0;
  std::size_t epochs = 40;
  std::size_t batch_size = 128;
  std::size_t hidden = 0;  // 0: dataset preset
  std::size_t pretrain = 5;
  double lr = 5e-3;
  std::size_t toy_samples = 10000;
  std::string input;
  std::string data_dir;
  std::string out = "runs/latest";
};

void add_train_flags(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--dataset", o.dataset,
                  "toy, insurance, crime, crime3, ihdp-control or ihdp-treatment")
      ->capture_default_str();
  cmd->add_option("--algo", o.algo, "hetero or residual")
      ->check(CLI::IsMember({"hetero", "residual"}))
      ->capture_default_str();
  cmd->add_option("--lambda", o.lambda, "regularizer weight; 0 trains the baseline")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmd->add_option("--epochs", o.epochs)->capture_default_str();
  cmd->add_option("--batch-size", o.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--hidden", o.hidden, "representation width (default: dataset preset)");
  cmd->add_option("--pretrain-epochs", o.pretrain)->capture_default_str();
  cmd->add_option("--lr", o.lr, "initial learning rate")->capture_default_str();
  cmd->add_option("--toy-samples", o.toy_samples)->capture_default_str();
  cmd->add_option("--input", o.input, "dataset CSV (default: <data-dir>/<dataset file>)");
  cmd->add_option("--data-dir", o.data_dir, "dataset directory (default: $FSR_DATA_DIR or ./data)");
  cmd->add_option("--out", o.out, "output directory")->capture_default_str();
}

RunManifest make_manifest(const TrainOptions& o, std::uint64_t seed, const fs::path& out) {
  RunManifest m;
  m.dataset = parse_dataset(o.dataset);
  m.config.algorithm =
      o.algo == "residual" ? Algorithm::kResidualCalibration : Algorithm::kHeteroSufficiency;
  m.config.lambda = o.lambda;
  m.config.seed = seed;
  m.config.epochs = o.epochs;
  m.config.batch_size = o.batch_size;
  m.config.hidden_dim = o.hidden != 0 ? o.hidden : default_hidden(m.dataset);
  m.config.pretrain_epochs = o.pretrain;
  m.config.lr_init = o.lr;
  m.toy_samples = o.toy_samples;
  if (m.dataset != DatasetId::kToy) {
    if (!o.input.empty()) {
      m.input = o.input;
    } else {
      const fs::path dir = o.data_dir.empty() ? default_data_dir() : fs::path(o.data_dir);
      m.input = dir / default_file_name(m.dataset);
    }
  }
  m.output_dir = out;
  return m;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + item + "' in --seeds");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds is empty");
  return seeds;
}

void print_report(const Evaluation& e) {
  const auto fmt = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string("undefined");
  };
  std::cout << "test mse " << format_double(e.test_mse) << "\n";
  std::cout << "auc " << fmt(e.report.auc) << "\n";
  for (const auto& [g, v] : e.report.auc_per_group) {
    std::cout << "auc d=" << g << " " << fmt(v) << "  violations "
              << e.report.monotonicity_violations.at(g) << "\n";
  }
  std::cout << "auadc " << fmt(e.report.auadc) << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Fair selective regression: training and risk-coverage evaluation"};
  app.require_subcommand(1);

  TrainOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "train a model and write it to --out");
  add_train_flags(train_cmd, train_opts);
  train_cmd->add_option("--seed", train_opts.seed)->capture_default_str();

  EvalOptions eval_opts;
  std::size_t points = 100;
  std::string run_dir;
  auto* eval_cmd = app.add_subcommand("evaluate", "score a trained run on its test split");
  eval_cmd->add_option("--run", run_dir, "directory written by train")->required();
  eval_cmd->add_option("--cmin", eval_opts.c_min, "lower coverage limit of the areas")
      ->capture_default_str();
  eval_cmd->add_option("--points", points, "curve point cap (0: every threshold)")
      ->capture_default_str();

  TrainOptions run_opts;
  std::string seeds_text = "0";
  EvalOptions run_eval;
  std::size_t run_points = 100;
  auto* run_cmd = app.add_subcommand("run", "train and evaluate, optionally over several seeds");
  add_train_flags(run_cmd, run_opts);
  run_cmd->add_option("--seeds", seeds_text, "comma separated, e.g. 1,2,3,4,5")
      ->capture_default_str();
  run_cmd->add_option("--seed", seeds_text, "single seed");
  run_cmd->add_option("--cmin", run_eval.c_min)->capture_default_str();
  run_cmd->add_option("--points", run_points)->capture_default_str();

  std::uint64_t demo_seed = 0;
  std::size_t demo_n = 100000;
  std::size_t demo_points = 20;
  double demo_cmin = 0.2;
  std::string demo_out = "runs/toy-demo";
  auto* demo_cmd = app.add_subcommand(
      "toy-demo", "oracle curves on the synthetic example under two uncertainty rules");
  demo_cmd->add_option("--seed", demo_seed)->capture_default_str();
  demo_cmd->add_option("--samples", demo_n)->check(CLI::Range(2, 100000000))->capture_default_str();
  demo_cmd->add_option("--points", demo_points)->capture_default_str();
  demo_cmd->add_option("--cmin", demo_cmin)->capture_default_str();
  demo_cmd->add_option("--out", demo_out)->capture_default_str();

  TrainOptions prep_opts;
  auto* prep_cmd = app.add_subcommand("prepare", "write the processed train/test split as CSV");
  add_train_flags(prep_cmd, prep_opts);
  prep_cmd->add_option("--seed", prep_opts.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train_cmd) {
      const RunManifest m = make_manifest(train_opts, train_opts.seed, train_opts.out);
      cmd_train(m);
      std::cout << "wrote " << m.output_dir.string() << "\n";
    } else if (*eval_cmd) {
      print_report(cmd_evaluate(run_dir, eval_opts, points));
    } else if (*run_cmd) {
      const auto seeds = parse_seeds(seeds_text);
      std::vector<FairnessReport> reports;
      for (std::uint64_t seed : seeds) {
        const fs::path dir = seeds.size() == 1 ? fs::path(run_opts.out)
                                               : fs::path(run_opts.out) /
                                                     ("seed_" + std::to_string(seed));
        cmd_train(make_manifest(run_opts, seed, dir));
        const Evaluation e = cmd_evaluate(dir, run_eval, run_points);
        std::cout << "seed " << seed << "\n";
        print_report(e);
        reports.push_back(e.report);
      }
      if (seeds.size() > 1) {
        json summary;
        for (const auto& [name, s] : summarize(reports)) {
          summary[name] = {{"mean", s.mean}, {"std", s.std}, {"runs", s.count}};
          std::cout << name << " " << format_double(s.mean) << " +- " << format_double(s.std)
                    << "\n";
        }
        summary["seeds"] = seeds;
        write_text(fs::path(run_opts.out) / "summary.json", summary.dump(2) + "\n");
        read_json(fs::path(run_opts.out) / "summary.json");
      }
    } else if (*demo_cmd) {
      const ToyDemo demo = cmd_toy_demo(demo_seed, demo_n, demo_points, demo_cmin, demo_out);
      std::cout << "marginal-variance rule\n";
      print_report(demo.marginal);
      std::cout << "x1-only rule\n";
      print_report(demo.x1_only);
    } else if (*prep_cmd) {
      const RunManifest m = make_manifest(prep_opts, prep_opts.seed, prep_opts.out);
      write_dataset_cache(load_split(m), m.output_dir);
      std::cout << "wrote " << m.output_dir.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace fsr::cli
