#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfl/data.hpp"
#include "cfl/metrics.hpp"
#include "cfl/model.hpp"
#include "cfl/params.hpp"

namespace cfl {

enum class Regime { SpecializedFL, ConventionalFL, ClusteredFL };

std::string regime_name(Regime regime);

struct Cluster {
  int cluster_id = 0;
  std::vector<int> client_ids;
};

/// Static client-to-cluster assignment. Client ids are globally unique and
/// every client belongs to exactly one cluster.
struct Topology {
  std::vector<Cluster> clusters;
  Regime regime = Regime::ClusteredFL;

  int total_clients() const;
  void validate() const;
};

/// Cluster-major topology with client ids 0..n-1.
Topology make_topology(std::span<const int> clients_per_cluster, Regime regime);

enum class ClientWeighting { Uniform, BySampleCount };

struct EarlyStopConfig {
  bool enabled = false;
  int patience = 5;
  double min_delta = 1e-4;
};

struct FederationConfig {
  int rounds = 30;
  int epochs = 5;
  int batch_size = 16;
  OptimizerSpec optimizer;
  ClientWeighting client_weighting = ClientWeighting::Uniform;
  double dropout_probability = 0.0;
  EarlyStopConfig early_stop;
  std::uint64_t master_seed = 0;
  double augment_noise_sigma = 0.0;  // optional per-batch feature noise
  int threads = 1;
};

/// Server-side view of one completed communication round.
struct RoundRecord {
  int round = 0;  // 1-based
  Regime regime = Regime::ClusteredFL;
  double loss = 0.0;  // mean loss on the merged multimodal test set
  double accuracy = 0.0;
  EvalReport report;
  std::vector<int> participants;
  double duration_seconds = 0.0;
};

struct ExperimentResult {
  std::vector<RoundRecord> records;
  // Weights from the best-loss round: "global" for the single-model regimes,
  // one entry per modality tag for SpecializedFL.
  std::map<std::string, ParameterVector> final_weights;
  std::size_t best_round_index = 0;  // 0-based into records
  std::optional<Inflection> early_stop;
  // Set when a round error aborted the experiment; completed records are kept.
  std::optional<std::string> aborted;
};

/// Eq.-1 flat rule: one weighted mean over every participating client.
ParameterVector aggregate_flat(std::span<const ParameterVector> updates,
                               std::span<const double> weights);

/// Algorithm-1 two-level rule: weighted mean within each cluster, then an
/// unweighted mean across cluster aggregates.
ParameterVector aggregate_clustered(
    std::span<const std::vector<ParameterVector>> per_cluster_updates,
    std::span<const std::vector<double>> per_cluster_weights);

/// Participants of a round; a pure function of (topology, master_seed, round,
/// dropout_probability).
std::vector<int> surviving_clients(const Topology& topology, std::uint64_t master_seed, int round,
                                   double dropout_probability);

/// One client's local update: fresh optimizer state, `epochs` passes of
/// seeded mini-batch steps over the shard. The incoming vector is not
/// mutated. Deterministic given (client_seed, round).
ParameterVector client_local_train(const ModelSpec& spec, const ParameterVector& incoming,
                                   const Dataset& shard, const FederationConfig& config,
                                   std::uint64_t client_seed, int round);

/// The round loop of the protocol. Holds client shards privately; the public
/// surface only ever hands out weights and metrics.
class Federation {
 public:
  Federation(Topology topology, FederationConfig config, ModelSpec model,
             std::vector<Dataset> client_shards, std::vector<Dataset> cluster_tests,
             std::optional<ParameterVector> initial_weights = std::nullopt);

  /// Executes the next communication round: broadcast, dropout, local
  /// training, aggregation, server evaluation.
  RoundRecord run_round();

  /// Runs up to config.rounds rounds with optional early stopping; returns
  /// all records plus the weights of the best-loss round.
  ExperimentResult run();

  /// Current model weights ("global", or one entry per modality tag).
  std::map<std::string, ParameterVector> current_models() const;

 private:
  EvalReport evaluate_round() const;

  Topology topology_;
  FederationConfig config_;
  ModelSpec model_;
  std::vector<Dataset> shards_;        // by global client id
  std::vector<Dataset> cluster_tests_;  // by cluster index
  Dataset merged_test_;
  std::vector<std::string> cluster_names_;
  std::vector<ParameterVector> cluster_models_;  // SpecializedFL only
  ParameterVector global_model_;
  int next_round_ = 1;
};

}  // namespace cfl
