#include "cfl/federation.hpp"

#include <algorithm>
#include <chrono>
#include <limits>

#include "cfl/errors.hpp"
#include "cfl/rng.hpp"
#include "parallel.hpp"

namespace cfl {

namespace {

std::uint64_t client_train_seed(std::uint64_t master_seed, int client_id) {
  return derive_seed(master_seed, Stream::LocalTrain, static_cast<std::uint64_t>(client_id));
}

double client_weight(ClientWeighting weighting, const Dataset& shard) {
  return weighting == ClientWeighting::Uniform ? 1.0 : static_cast<double>(shard.size());
}

}  // namespace

std::string regime_name(Regime regime) {
  switch (regime) {
    case Regime::SpecializedFL: return "specialized";
    case Regime::ConventionalFL: return "conventional";
    case Regime::ClusteredFL: return "clustered";
  }
  return "unknown";
}

int Topology::total_clients() const {
  int n = 0;
  for (const Cluster& c : clusters) n += static_cast<int>(c.client_ids.size());
  return n;
}

void Topology::validate() const {
  if (clusters.empty()) {
    throw ConfigError("topology needs at least one cluster");
  }
  std::vector<int> seen;
  for (const Cluster& c : clusters) {
    if (c.client_ids.empty()) {
      throw ConfigError("cluster " + std::to_string(c.cluster_id) + " has no clients");
    }
    for (int id : c.client_ids) {
      if (std::find(seen.begin(), seen.end(), id) != seen.end()) {
        throw ConfigError("client id " + std::to_string(id) + " appears in more than one cluster");
      }
      seen.push_back(id);
    }
  }
}

Topology make_topology(std::span<const int> clients_per_cluster, Regime regime) {
  Topology topology;
  topology.regime = regime;
  int next_id = 0;
  for (std::size_t i = 0; i < clients_per_cluster.size(); ++i) {
    Cluster cluster;
    cluster.cluster_id = static_cast<int>(i);
    for (int j = 0; j < clients_per_cluster[i]; ++j) {
      cluster.client_ids.push_back(next_id++);
    }
    topology.clusters.push_back(std::move(cluster));
  }
  topology.validate();
  return topology;
}

ParameterVector aggregate_flat(std::span<const ParameterVector> updates,
                               std::span<const double> weights) {
  return weighted_mean(updates, weights);
}

ParameterVector aggregate_clustered(
    std::span<const std::vector<ParameterVector>> per_cluster_updates,
    std::span<const std::vector<double>> per_cluster_weights) {
  if (per_cluster_updates.size() != per_cluster_weights.size()) {
    throw DimensionError("per-cluster update and weight list counts differ");
  }
  std::vector<ParameterVector> cluster_means;
  cluster_means.reserve(per_cluster_updates.size());
  for (std::size_t i = 0; i < per_cluster_updates.size(); ++i) {
    if (per_cluster_updates[i].empty()) continue;  // cluster contributes nothing
    cluster_means.push_back(weighted_mean(per_cluster_updates[i], per_cluster_weights[i]));
  }
  if (cluster_means.empty()) {
    throw AggregationError("no cluster produced an update");
  }
  const std::vector<double> uniform(cluster_means.size(), 1.0);
  return weighted_mean(cluster_means, uniform);
}

std::vector<int> surviving_clients(const Topology& topology, std::uint64_t master_seed, int round,
                                   double dropout_probability) {
  std::vector<int> survivors;
  for (const Cluster& cluster : topology.clusters) {
    for (int id : cluster.client_ids) {
      if (dropout_probability <= 0.0) {
        survivors.push_back(id);
        continue;
      }
      Rng rng(derive_seed(master_seed, Stream::Dropout, static_cast<std::uint64_t>(round),
                          static_cast<std::uint64_t>(id)));
      if (rng.uniform01() >= dropout_probability) {
        survivors.push_back(id);
      }
    }
  }
  return survivors;
}

ParameterVector client_local_train(const ModelSpec& spec, const ParameterVector& incoming,
                                   const Dataset& shard, const FederationConfig& config,
                                   std::uint64_t client_seed, int round) {
  if (incoming.size() != parameter_count(spec)) {
    throw DimensionError("incoming weights have length " + std::to_string(incoming.size()) +
                         ", model needs " + std::to_string(parameter_count(spec)));
  }
  // Optimizer state is reset every round: the server overwrote the weights
  // the moments were tracking.
  Optimizer optimizer(config.optimizer, incoming.size());
  ParameterVector current = incoming;
  Rng rng(derive_seed(client_seed, static_cast<std::uint64_t>(round)));

  std::vector<std::size_t> order(shard.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      std::vector<Sample> batch;
      batch.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(shard[order[k]]);
      }
      if (config.augment_noise_sigma > 0.0) {
        for (Sample& s : batch) {
          for (double& f : s.features) {
            f += config.augment_noise_sigma * rng.normal();
          }
        }
      }
      ++step;
      try {
        auto [loss, gradient] = loss_and_gradient(spec, current, batch);
        current = optimizer.step(current, gradient);
      } catch (const NumericError& e) {
        throw NumericError("client diverged at round " + std::to_string(round) + " step " +
                           std::to_string(step) + ": " + e.what());
      }
    }
  }
  return current;
}

Federation::Federation(Topology topology, FederationConfig config, ModelSpec model,
                       std::vector<Dataset> client_shards, std::vector<Dataset> cluster_tests,
                       std::optional<ParameterVector> initial_weights)
    : topology_(std::move(topology)),
      config_(config),
      model_(model),
      shards_(std::move(client_shards)),
      cluster_tests_(std::move(cluster_tests)),
      merged_test_(merge_test_sets(cluster_tests_)),
      global_model_(initial_weights ? std::move(*initial_weights) : init_params(model_)) {
  topology_.validate();
  if (config_.rounds < 1 || config_.epochs < 1 || config_.batch_size < 1) {
    throw ConfigError("rounds, epochs and batch_size must all be at least 1");
  }
  if (config_.dropout_probability < 0.0 || config_.dropout_probability >= 1.0) {
    throw ConfigError("dropout_probability must lie in [0, 1)");
  }
  if (static_cast<int>(shards_.size()) != topology_.total_clients()) {
    throw ConfigError("got " + std::to_string(shards_.size()) + " shards for " +
                      std::to_string(topology_.total_clients()) + " clients");
  }
  if (cluster_tests_.size() != topology_.clusters.size()) {
    throw ConfigError("need one test set per cluster");
  }
  if (global_model_.size() != parameter_count(model_)) {
    throw DimensionError("initial weights have length " + std::to_string(global_model_.size()) +
                         ", model needs " + std::to_string(parameter_count(model_)));
  }
  for (const Dataset& shard : shards_) {
    if (shard.input_dim() != model_.input_dim) {
      throw DimensionError("shard input_dim does not match the model");
    }
  }
  for (const Dataset& test : cluster_tests_) {
    cluster_names_.push_back(test.distinct_tags().front());
  }
  cluster_models_.assign(topology_.clusters.size(), global_model_);
}

EvalReport Federation::evaluate_round() const {
  if (topology_.regime != Regime::SpecializedFL) {
    return evaluate(model_, global_model_, merged_test_);
  }
  // Each cluster's model is scored only on its own modality's test subset.
  std::vector<EvalReport> reports;
  reports.reserve(cluster_tests_.size());
  for (std::size_t i = 0; i < cluster_tests_.size(); ++i) {
    reports.push_back(evaluate(model_, cluster_models_[i], cluster_tests_[i]));
  }
  return combine_reports(reports);
}

RoundRecord Federation::run_round() {
  const auto started = std::chrono::steady_clock::now();
  const int round = next_round_++;

  const std::vector<int> survivors =
      surviving_clients(topology_, config_.master_seed, round, config_.dropout_probability);
  if (survivors.empty()) {
    throw AggregationError("all clients dropped in round " + std::to_string(round));
  }

  // Broadcast: every surviving client starts from its federation's current
  // weights (the single global model, or its cluster's model under
  // SpecializedFL).
  std::vector<ParameterVector> incoming;
  std::vector<std::size_t> survivor_cluster(survivors.size());
  for (std::size_t i = 0; i < survivors.size(); ++i) {
    for (std::size_t c = 0; c < topology_.clusters.size(); ++c) {
      const auto& ids = topology_.clusters[c].client_ids;
      if (std::find(ids.begin(), ids.end(), survivors[i]) != ids.end()) {
        survivor_cluster[i] = c;
        break;
      }
    }
    incoming.push_back(topology_.regime == Regime::SpecializedFL
                           ? cluster_models_[survivor_cluster[i]]
                           : global_model_);
  }

  std::vector<ParameterVector> updates(survivors.size(), ParameterVector::zeros(1));
  detail::parallel_for(survivors.size(), config_.threads, [&](std::size_t i) {
    const int id = survivors[i];
    try {
      updates[i] = client_local_train(model_, incoming[i], shards_[static_cast<std::size_t>(id)],
                                      config_, client_train_seed(config_.master_seed, id), round);
    } catch (const NumericError& e) {
      throw NumericError("client " + std::to_string(id) + ": " + e.what());
    }
  });

  // Group updates and weights by cluster, in topology order.
  std::vector<std::vector<ParameterVector>> cluster_updates(topology_.clusters.size());
  std::vector<std::vector<double>> cluster_weights(topology_.clusters.size());
  for (std::size_t i = 0; i < survivors.size(); ++i) {
    const std::size_t c = survivor_cluster[i];
    cluster_updates[c].push_back(updates[i]);
    cluster_weights[c].push_back(client_weight(
        config_.client_weighting, shards_[static_cast<std::size_t>(survivors[i])]));
  }

  switch (topology_.regime) {
    case Regime::ConventionalFL: {
      std::vector<double> weights;
      for (std::size_t i = 0; i < survivors.size(); ++i) {
        weights.push_back(client_weight(config_.client_weighting,
                                        shards_[static_cast<std::size_t>(survivors[i])]));
      }
      global_model_ = aggregate_flat(updates, weights);
      break;
    }
    case Regime::ClusteredFL:
      global_model_ = aggregate_clustered(cluster_updates, cluster_weights);
      break;
    case Regime::SpecializedFL:
      for (std::size_t c = 0; c < topology_.clusters.size(); ++c) {
        if (cluster_updates[c].empty()) continue;  // fully dropped: keep previous model
        cluster_models_[c] = weighted_mean(cluster_updates[c], cluster_weights[c]);
      }
      break;
  }

  RoundRecord record;
  record.round = round;
  record.regime = topology_.regime;
  record.report = evaluate_round();
  record.loss = record.report.mean_loss;
  record.accuracy = record.report.accuracy;
  record.participants = survivors;
  record.duration_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return record;
}

ExperimentResult Federation::run() {
  ExperimentResult result;
  EarlyStopper stopper(config_.early_stop.patience, config_.early_stop.min_delta);
  double best_loss = std::numeric_limits<double>::infinity();

  for (int r = 1; r <= config_.rounds; ++r) {
    RoundRecord record;
    try {
      record = run_round();
    } catch (const Error& e) {
      result.aborted = e.what();
      break;
    }
    const double loss = record.loss;
    result.records.push_back(std::move(record));
    if (loss < best_loss) {
      best_loss = loss;
      result.best_round_index = result.records.size() - 1;
      result.final_weights = current_models();
    }
    if (config_.early_stop.enabled && stopper.observe(loss)) {
      result.early_stop = Inflection{stopper.best_index(), result.records.size() - 1};
      break;
    }
  }
  return result;
}

std::map<std::string, ParameterVector> Federation::current_models() const {
  std::map<std::string, ParameterVector> models;
  if (topology_.regime == Regime::SpecializedFL) {
    for (std::size_t c = 0; c < cluster_models_.size(); ++c) {
      models.emplace(cluster_names_[c], cluster_models_[c]);
    }
  } else {
    models.emplace("global", global_model_);
  }
  return models;
}

}  // namespace cfl
