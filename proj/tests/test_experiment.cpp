#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "cfl/errors.hpp"
#include "cfl/experiment.hpp"

using namespace cfl;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

// A deliberately tiny experiment so CLI-level tests stay fast.
json tiny_config_json() {
  const auto modality = [](const std::string& name, int axis, int pos, int neg, int seed) {
    json negative_mean = json::array();
    json positive_mean = json::array();
    for (int d = 0; d < 4; ++d) {
      negative_mean.push_back(d == axis ? -1.5 : 0.0);
      positive_mean.push_back(d == axis ? 1.5 : 0.0);
    }
    return json{{"name", name},
                {"class_means", {{"negative", negative_mean}, {"positive", positive_mean}}},
                {"class_scales", {{"negative", 1.0}, {"positive", 1.0}}},
                {"positive_count", pos},
                {"negative_count", neg},
                {"noise_seed", seed}};
  };
  return json{
      {"data",
       {{"synthetic",
         {{"input_dim", 4},
          {"test_fraction", 0.2},
          {"split_seed", 11},
          {"modalities", json::array({modality("xray", 0, 30, 60, 1),
                                      modality("ultrasound", 1, 40, 20, 2)})}}}}},
      {"model",
       {{"architecture", "logistic_regression"},
        {"input_dim", 4},
        {"init_seed", 3},
        {"loss", {{"kind", "cross_entropy"}, {"alpha", 1.0}, {"gamma", 0.0}}}}},
      {"federation",
       {{"rounds", 2},
        {"epochs", 1},
        {"batch_size", 8},
        {"optimizer", {{"kind", "sgd"}, {"learning_rate", 0.1}}},
        {"client_weighting", "uniform"},
        {"clients_per_cluster", {1, 1}}}},
      {"regimes", {"clustered"}},
      {"seeds", {1}},
      {"output_dir", "results"}};
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_json(const fs::path& dir, const std::string& name, const json& document) {
  const fs::path path = dir / name;
  std::ofstream out(path);
  out << document.dump(2);
  return path;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

int cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"cflsim"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("shipped default config matches the built-in defaults") {
  const fs::path path = fs::path(CFL_SOURCE_DIR) / "configs" / "default.json";
  const ExperimentConfig from_file = load_config(path);
  CHECK(to_json(from_file) == to_json(default_experiment_config()));
}

TEST_CASE("config round-trips through its JSON form") {
  const ExperimentConfig config = default_experiment_config();
  const ExperimentConfig reparsed = parse_config(to_json(config));
  CHECK(to_json(reparsed) == to_json(config));
}

TEST_CASE("unknown keys are rejected with their path") {
  json document = tiny_config_json();
  document["federation"]["batchsize"] = 16;
  CHECK_THROWS_WITH_AS(parse_config(document),
                       doctest::Contains("$.federation.batchsize"), ConfigError);

  json nested = tiny_config_json();
  nested["data"]["synthetic"]["modalities"][0]["nam"] = "x";
  CHECK_THROWS_WITH_AS(parse_config(nested),
                       doctest::Contains("$.data.synthetic.modalities[0].nam"), ConfigError);
}

TEST_CASE("underscore keys are comments") {
  json document = tiny_config_json();
  document["federation"]["_note"] = "lr 1e-3 appears in one table; prose says 1e-4";
  CHECK_NOTHROW(parse_config(document));
}

TEST_CASE("schema violations carry the offending path") {
  json bad_rounds = tiny_config_json();
  bad_rounds["federation"]["rounds"] = 0;
  CHECK_THROWS_WITH_AS(parse_config(bad_rounds), doctest::Contains("$.federation.rounds"),
                       ConfigError);

  json bad_regime = tiny_config_json();
  bad_regime["regimes"] = {"centralized"};
  CHECK_THROWS_WITH_AS(parse_config(bad_regime), doctest::Contains("$.regimes[0]"), ConfigError);

  json one_modality = tiny_config_json();
  one_modality["data"]["synthetic"]["modalities"].erase(1);
  CHECK_THROWS_AS(parse_config(one_modality), ConfigError);

  json both_sources = tiny_config_json();
  both_sources["data"]["files"] = {{"paths", {"a.cfld"}}, {"split_seed", 1}};
  CHECK_THROWS_AS(parse_config(both_sources), ConfigError);

  json dup_seed = tiny_config_json();
  dup_seed["seeds"] = {1, 1};
  CHECK_THROWS_WITH_AS(parse_config(dup_seed), doctest::Contains("$.seeds[1]"), ConfigError);
}

TEST_CASE("single run produces one CSV with one data row per round") {
  ExperimentConfig config = parse_config(tiny_config_json());
  config.federation.rounds = 1;
  const RunOutput run = run_single(config, Regime::ClusteredFL, 1, 1);
  const std::string csv = round_csv(run);

  std::istringstream lines(csv);
  std::string header;
  std::getline(lines, header);
  CHECK(header ==
        "round,loss,accuracy,precision_covid,recall_covid,f1_covid,precision_healthy,"
        "recall_healthy,f1_healthy,macro_f1,f1_xray_modality,f1_ultrasound_modality,"
        "participants");
  std::string row;
  int rows = 0;
  while (std::getline(lines, row)) {
    if (!row.empty()) ++rows;
  }
  CHECK(rows == 1);
  CHECK(csv.substr(csv.rfind(',') + 1) == "0;1\n");
}

TEST_CASE("summary.json re-parses to the emitted structures") {
  const ExperimentConfig config = parse_config(tiny_config_json());
  const ResultBundle bundle = run_all(config, 1);
  const json summary = summary_json(bundle);

  const auto dir = temp_dir("cfl_summary_roundtrip");
  write_outputs(bundle, dir, false);
  const json reloaded = json::parse(slurp(dir / "summary.json"));
  CHECK(reloaded == summary);

  // Spot-check fields against the in-memory records.
  const RunOutput& run = bundle.runs.front();
  CHECK(reloaded["runs"][0]["seed"].get<std::uint64_t>() == run.seed);
  CHECK(reloaded["runs"][0]["rounds"].size() == run.result.records.size());
  CHECK(reloaded["runs"][0]["rounds"][0]["loss"].get<double>() ==
        run.result.records[0].loss);
  CHECK(reloaded["runs"][0]["final"]["macro_f1"].get<double>() == run.final_report.macro_f1);
  fs::remove_all(dir);
}

TEST_CASE("repeated runs and different thread counts give byte-identical CSVs") {
  const ExperimentConfig config = parse_config(tiny_config_json());
  const auto dir_a = temp_dir("cfl_det_a");
  const auto dir_b = temp_dir("cfl_det_b");
  const auto dir_c = temp_dir("cfl_det_c");
  write_outputs(run_all(config, 1), dir_a, false);
  write_outputs(run_all(config, 1), dir_b, false);
  write_outputs(run_all(config, 4), dir_c, false);

  const std::string name = "rounds_clustered_1.csv";
  const std::string a = slurp(dir_a / name);
  CHECK(a == slurp(dir_b / name));
  CHECK(a == slurp(dir_c / name));
  CHECK(!a.empty());
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  fs::remove_all(dir_c);
}

TEST_CASE("comparison table renders two decimals, rows per modality and class") {
  // Fabricated single-run bundle with known metric values.
  RunOutput run;
  run.regime = Regime::ClusteredFL;
  run.seed = 7;
  ModalityReport xray;
  xray.tag = "xray";
  xray.covid = ClassMetrics{0.71, 0.82, 0.7649, false};
  xray.healthy = ClassMetrics{0.97, 0.94, 0.955, false};
  ModalityReport us;
  us.tag = "ultrasound";
  us.covid = ClassMetrics{0.93, 0.95, 0.94, false};
  us.healthy = ClassMetrics{0.86, 0.80, 0.83, false};
  run.final_report.per_modality = {xray, us};
  run.final_report.macro_f1 = 0.7649;
  RoundRecord record;
  record.round = 1;
  record.report = run.final_report;
  run.result.records.push_back(record);
  run.result.best_round_index = 0;
  run.csv_name = "rounds_clustered_7.csv";

  ResultBundle bundle;
  bundle.runs.push_back(run);
  const std::string table = comparison_table(bundle);
  CHECK(table.find("0.76") != std::string::npos);   // 0.7649 rounds to 0.76
  CHECK(table.find("0.7649") == std::string::npos);
  CHECK(table.find("xray") != std::string::npos);
  CHECK(table.find("ultrasound") != std::string::npos);
  CHECK(table.find("COVID-19") != std::string::npos);
  CHECK(table.find("Healthy") != std::string::npos);
  CHECK(table.find("Clustered FL") != std::string::npos);
}

TEST_CASE("cli: validate accepts the tiny config and run writes outputs") {
  const auto dir = temp_dir("cfl_cli");
  const auto config_path = write_json(dir, "config.json", tiny_config_json());

  CHECK(cli({"validate", "--config", config_path.string()}) == 0);

  const auto out_dir = dir / "out";
  CHECK(cli({"run", "--config", config_path.string(), "--out", out_dir.string(), "--threads",
             "2", "--save-weights"}) == 0);
  CHECK(fs::exists(out_dir / "rounds_clustered_1.csv"));
  CHECK(fs::exists(out_dir / "summary.json"));
  CHECK(fs::exists(out_dir / "comparison.txt"));
  CHECK(fs::exists(out_dir / "weights_clustered_1.cflw"));
  fs::remove_all(dir);
}

TEST_CASE("cli: exit code 2 for configuration problems") {
  const auto dir = temp_dir("cfl_cli_errors");
  CHECK(cli({"run", "--config", (dir / "missing.json").string()}) == 2);

  json broken = tiny_config_json();
  broken["federation"]["rounds"] = -2;
  const auto config_path = write_json(dir, "broken.json", broken);
  CHECK(cli({"validate", "--config", config_path.string()}) == 2);

  json unknown = tiny_config_json();
  unknown["extra_section"] = 1;
  const auto unknown_path = write_json(dir, "unknown.json", unknown);
  CHECK(cli({"run", "--config", unknown_path.string()}) == 2);
  fs::remove_all(dir);
}

TEST_CASE("cli: gen-data emits a dataset that files-mode configs can ingest") {
  const auto dir = temp_dir("cfl_gen_data");
  const auto config_path = write_json(dir, "config.json", tiny_config_json());
  const auto data_path = dir / "benchmark.cfld";

  CHECK(cli({"gen-data", "--config", config_path.string(), "--emit-dataset",
             data_path.string()}) == 0);
  REQUIRE(fs::exists(data_path));

  const Dataset merged = read_dataset(data_path);
  CHECK(merged.size() == 30 + 60 + 40 + 20);
  CHECK(merged.distinct_tags() == std::vector<std::string>{"xray", "ultrasound"});

  json files_config = tiny_config_json();
  files_config["data"] = {
      {"files", {{"paths", {data_path.string()}}, {"test_fraction", 0.2}, {"split_seed", 11}}}};
  const auto files_path = write_json(dir, "files.json", files_config);
  const auto out_dir = dir / "out";
  CHECK(cli({"run", "--config", files_path.string(), "--out", out_dir.string()}) == 0);
  CHECK(fs::exists(out_dir / "rounds_clustered_1.csv"));

  // --dataset overrides the configured source with the same ingestion path.
  const auto override_dir = dir / "out_override";
  CHECK(cli({"run", "--config", config_path.string(), "--dataset", data_path.string(), "--out",
             override_dir.string()}) == 0);
  CHECK(slurp(override_dir / "rounds_clustered_1.csv") ==
        slurp(out_dir / "rounds_clustered_1.csv"));
  fs::remove_all(dir);
}

TEST_CASE("load-weights seeds every run from the checkpoint") {
  const auto dir = temp_dir("cfl_load_weights");
  const ExperimentConfig config = parse_config(tiny_config_json());

  // A zero initial vector is visible in round-1 behavior only through the
  // deterministic pipeline; just verify the override is accepted and used.
  const ParameterVector zeros = ParameterVector::zeros(5);
  const RunOutput with_override = run_single(config, Regime::ClusteredFL, 1, 1, zeros);
  const RunOutput without = run_single(config, Regime::ClusteredFL, 1, 1);
  CHECK(with_override.result.records[0].loss != without.result.records[0].loss);
  fs::remove_all(dir);
}

}  // TEST_SUITE
