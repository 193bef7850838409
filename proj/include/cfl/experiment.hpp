#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cfl/data.hpp"
#include "cfl/federation.hpp"
#include "cfl/metrics.hpp"
#include "cfl/model.hpp"

namespace cfl {

struct SyntheticDataConfig {
  int input_dim = 32;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
  std::vector<ModalitySpec> modalities;
};

struct FileDataConfig {
  std::vector<std::filesystem::path> paths;  // one merged file or one per modality
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
};

/// Parsed and validated experiment document.
struct ExperimentConfig {
  std::variant<SyntheticDataConfig, FileDataConfig> data;
  ModelSpec model;
  FederationConfig federation;  // master_seed/threads are filled in per run
  std::vector<int> clients_per_cluster;
  std::vector<Regime> regimes;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir = "results";
};

/// Strict schema walk: unknown keys are rejected with their path; keys
/// starting with "_" are treated as comments and ignored.
ExperimentConfig parse_config(const nlohmann::json& document);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);

/// The shipped bimodal benchmark (mirrored by configs/default.json).
ExperimentConfig default_experiment_config();

nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const RoundRecord& record);

struct RunOutput {
  Regime regime = Regime::ClusteredFL;
  std::uint64_t seed = 0;
  ExperimentResult result;
  EvalReport final_report;  // evaluation at the best-loss round
  std::string csv_name;
};

struct ResultBundle {
  std::vector<RunOutput> runs;
};

/// Builds the per-run datasets: modality generation (or file ingestion) with
/// all stage seeds derived from the run's master seed.
FederatedData build_run_data(const ExperimentConfig& config, std::uint64_t master_seed);

RunOutput run_single(const ExperimentConfig& config, Regime regime, std::uint64_t master_seed,
                     int threads, const std::optional<ParameterVector>& initial_weights = {});

/// Every (regime x seed) combination, in config order.
ResultBundle run_all(const ExperimentConfig& config, int threads,
                     const std::optional<ParameterVector>& initial_weights = {});

std::string round_csv(const RunOutput& run);
nlohmann::json summary_json(const ResultBundle& bundle);
std::string comparison_table(const ResultBundle& bundle);

/// Writes rounds_<regime>_<seed>.csv for each run plus summary.json and
/// comparison.txt (and .cflw checkpoints when save_weights is set).
void write_outputs(const ResultBundle& bundle, const std::filesystem::path& out_dir,
                   bool save_weights);

/// Experiment runner entry point. Exit codes: 0 success, 2 configuration
/// error, 3 runtime error.
int run_cli(int argc, const char* const* argv);

}  // namespace cfl
