#include "cfl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "cfl/errors.hpp"
#include "cfl/rng.hpp"

namespace cfl {

namespace {

using nlohmann::json;

std::string fmt17(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

std::string fmt2(double value) {
  char buffer[16];
  std::snprintf(buffer, sizeof(buffer), "%.2f", value);
  return buffer;
}

// ---------------------------------------------------------------------------
// Schema reading

/// Tracks which keys of one JSON object were consumed; everything else (bar
/// "_"-prefixed comment keys) is reported as unknown, with its path.
class ObjectReader {
 public:
  ObjectReader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) {
      throw ConfigError(path_ + " must be an object");
    }
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  const json& require(const std::string& key) {
    consumed_.insert(key);
    const auto it = node_.find(key);
    if (it == node_.end()) {
      throw ConfigError(child(key) + " is required");
    }
    return *it;
  }

  const json* optional(const std::string& key) {
    consumed_.insert(key);
    const auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  std::string child(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!it.key().empty() && it.key().front() == '_') continue;
      if (!consumed_.contains(it.key())) {
        throw ConfigError("unknown key " + child(it.key()));
      }
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> consumed_;
};

int as_positive_int(const json& node, const std::string& path) {
  if (!node.is_number_integer() || node.get<long long>() < 1) {
    throw ConfigError(path + " must be a positive integer");
  }
  return node.get<int>();
}

std::uint64_t as_seed(const json& node, const std::string& path) {
  if (!node.is_number_unsigned() && !(node.is_number_integer() && node.get<long long>() >= 0)) {
    throw ConfigError(path + " must be a non-negative integer");
  }
  return node.get<std::uint64_t>();
}

double as_double(const json& node, const std::string& path) {
  if (!node.is_number()) {
    throw ConfigError(path + " must be a number");
  }
  return node.get<double>();
}

bool as_bool(const json& node, const std::string& path) {
  if (!node.is_boolean()) {
    throw ConfigError(path + " must be a boolean");
  }
  return node.get<bool>();
}

std::string as_string(const json& node, const std::string& path) {
  if (!node.is_string()) {
    throw ConfigError(path + " must be a string");
  }
  return node.get<std::string>();
}

std::vector<double> as_double_vector(const json& node, const std::string& path) {
  if (!node.is_array() || node.empty()) {
    throw ConfigError(path + " must be a non-empty array of numbers");
  }
  std::vector<double> out;
  out.reserve(node.size());
  for (std::size_t i = 0; i < node.size(); ++i) {
    out.push_back(as_double(node[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Enum names

Architecture parse_architecture(const std::string& s, const std::string& path) {
  if (s == "logistic_regression") return Architecture::LogisticRegression;
  if (s == "mlp") return Architecture::Mlp;
  throw ConfigError(path + ": unknown architecture \"" + s + "\"");
}

const char* architecture_name(Architecture a) {
  return a == Architecture::LogisticRegression ? "logistic_regression" : "mlp";
}

Activation parse_activation(const std::string& s, const std::string& path) {
  if (s == "relu") return Activation::ReLU;
  if (s == "tanh") return Activation::Tanh;
  throw ConfigError(path + ": unknown activation \"" + s + "\"");
}

const char* activation_name(Activation a) { return a == Activation::ReLU ? "relu" : "tanh"; }

LossKind parse_loss_kind(const std::string& s, const std::string& path) {
  if (s == "cross_entropy") return LossKind::CrossEntropy;
  if (s == "focal") return LossKind::Focal;
  throw ConfigError(path + ": unknown loss kind \"" + s + "\"");
}

const char* loss_kind_name(LossKind k) {
  return k == LossKind::CrossEntropy ? "cross_entropy" : "focal";
}

OptimizerKind parse_optimizer_kind(const std::string& s, const std::string& path) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError(path + ": unknown optimizer \"" + s + "\"");
}

const char* optimizer_kind_name(OptimizerKind k) {
  return k == OptimizerKind::Sgd ? "sgd" : "adam";
}

ClientWeighting parse_weighting(const std::string& s, const std::string& path) {
  if (s == "uniform") return ClientWeighting::Uniform;
  if (s == "by_sample_count") return ClientWeighting::BySampleCount;
  throw ConfigError(path + ": unknown client_weighting \"" + s + "\"");
}

const char* weighting_name(ClientWeighting w) {
  return w == ClientWeighting::Uniform ? "uniform" : "by_sample_count";
}

Regime parse_regime(const std::string& s, const std::string& path) {
  if (s == "specialized") return Regime::SpecializedFL;
  if (s == "conventional") return Regime::ConventionalFL;
  if (s == "clustered") return Regime::ClusteredFL;
  throw ConfigError(path + ": unknown regime \"" + s + "\"");
}

// ---------------------------------------------------------------------------
// Section parsers

ModalitySpec parse_modality(const json& node, const std::string& path, int input_dim) {
  ObjectReader reader(node, path);
  ModalitySpec spec;
  spec.name = as_string(reader.require("name"), reader.child("name"));
  spec.input_dim = input_dim;

  ObjectReader means(reader.require("class_means"), reader.child("class_means"));
  spec.class_means[0] = as_double_vector(means.require("negative"), means.child("negative"));
  spec.class_means[1] = as_double_vector(means.require("positive"), means.child("positive"));
  means.finish();
  for (int c = 0; c < 2; ++c) {
    if (static_cast<int>(spec.class_means[c].size()) != input_dim) {
      throw ConfigError(reader.child("class_means") + " entries must have length " +
                        std::to_string(input_dim));
    }
  }

  ObjectReader scales(reader.require("class_scales"), reader.child("class_scales"));
  spec.class_scales[0] = as_double(scales.require("negative"), scales.child("negative"));
  spec.class_scales[1] = as_double(scales.require("positive"), scales.child("positive"));
  scales.finish();

  if (const json* n = reader.optional("negative_count")) {
    spec.negative_count = as_positive_int(*n, reader.child("negative_count"));
  }
  if (const json* n = reader.optional("positive_count")) {
    spec.positive_count = as_positive_int(*n, reader.child("positive_count"));
  }
  spec.noise_seed = as_seed(reader.require("noise_seed"), reader.child("noise_seed"));
  reader.finish();
  return spec;
}

LossSpec parse_loss(const json& node, const std::string& path) {
  ObjectReader reader(node, path);
  LossSpec loss;
  loss.kind = parse_loss_kind(as_string(reader.require("kind"), reader.child("kind")),
                              reader.child("kind"));
  if (const json* a = reader.optional("alpha")) {
    loss.alpha = as_double(*a, reader.child("alpha"));
  }
  if (const json* g = reader.optional("gamma")) {
    loss.gamma = as_double(*g, reader.child("gamma"));
  }
  if (!(loss.alpha > 0.0 && loss.alpha <= 1.0)) {
    throw ConfigError(reader.child("alpha") + " must lie in (0, 1]");
  }
  if (loss.gamma < 0.0) {
    throw ConfigError(reader.child("gamma") + " must be non-negative");
  }
  reader.finish();
  return loss;
}

ModelSpec parse_model(const json& node, const std::string& path) {
  ObjectReader reader(node, path);
  ModelSpec spec;
  spec.architecture = parse_architecture(
      as_string(reader.require("architecture"), reader.child("architecture")),
      reader.child("architecture"));
  spec.input_dim = as_positive_int(reader.require("input_dim"), reader.child("input_dim"));
  if (spec.architecture == Architecture::Mlp) {
    spec.hidden_units =
        as_positive_int(reader.require("hidden_units"), reader.child("hidden_units"));
    if (const json* a = reader.optional("activation")) {
      spec.activation = parse_activation(as_string(*a, reader.child("activation")),
                                         reader.child("activation"));
    }
  } else {
    if (reader.optional("hidden_units") || reader.optional("activation")) {
      throw ConfigError(path + ": hidden_units/activation apply to the mlp architecture only");
    }
  }
  if (const json* s = reader.optional("init_seed")) {
    spec.init_seed = as_seed(*s, reader.child("init_seed"));
  }
  spec.loss = parse_loss(reader.require("loss"), reader.child("loss"));
  reader.finish();
  return spec;
}

OptimizerSpec parse_optimizer(const json& node, const std::string& path) {
  ObjectReader reader(node, path);
  OptimizerSpec spec;
  spec.kind = parse_optimizer_kind(as_string(reader.require("kind"), reader.child("kind")),
                                   reader.child("kind"));
  spec.learning_rate = as_double(reader.require("learning_rate"), reader.child("learning_rate"));
  if (!(spec.learning_rate > 0.0)) {
    throw ConfigError(reader.child("learning_rate") + " must be positive");
  }
  if (const json* b = reader.optional("adam_beta1")) {
    spec.adam_beta1 = as_double(*b, reader.child("adam_beta1"));
  }
  if (const json* b = reader.optional("adam_beta2")) {
    spec.adam_beta2 = as_double(*b, reader.child("adam_beta2"));
  }
  if (const json* e = reader.optional("adam_epsilon")) {
    spec.adam_epsilon = as_double(*e, reader.child("adam_epsilon"));
  }
  reader.finish();
  return spec;
}

EarlyStopConfig parse_early_stop(const json& node, const std::string& path) {
  ObjectReader reader(node, path);
  EarlyStopConfig early;
  early.enabled = as_bool(reader.require("enabled"), reader.child("enabled"));
  if (const json* p = reader.optional("patience")) {
    early.patience = as_positive_int(*p, reader.child("patience"));
  }
  if (const json* d = reader.optional("min_delta")) {
    early.min_delta = as_double(*d, reader.child("min_delta"));
    if (early.min_delta < 0.0) {
      throw ConfigError(reader.child("min_delta") + " must be non-negative");
    }
  }
  reader.finish();
  return early;
}

}  // namespace

ExperimentConfig parse_config(const json& document) {
  ObjectReader root(document, "$");
  ExperimentConfig config;

  config.model = parse_model(root.require("model"), root.child("model"));

  // data: exactly one of synthetic/files
  {
    ObjectReader data(root.require("data"), root.child("data"));
    const json* synthetic = data.optional("synthetic");
    const json* files = data.optional("files");
    if ((synthetic == nullptr) == (files == nullptr)) {
      throw ConfigError("$.data must contain exactly one of \"synthetic\" or \"files\"");
    }
    if (synthetic) {
      ObjectReader reader(*synthetic, data.child("synthetic"));
      SyntheticDataConfig s;
      s.input_dim = as_positive_int(reader.require("input_dim"), reader.child("input_dim"));
      if (s.input_dim != config.model.input_dim) {
        throw ConfigError(reader.child("input_dim") + " must match $.model.input_dim");
      }
      if (const json* f = reader.optional("test_fraction")) {
        s.test_fraction = as_double(*f, reader.child("test_fraction"));
      }
      if (!(s.test_fraction > 0.0 && s.test_fraction < 1.0)) {
        throw ConfigError(reader.child("test_fraction") + " must lie in (0, 1)");
      }
      s.split_seed = as_seed(reader.require("split_seed"), reader.child("split_seed"));
      const json& modalities = reader.require("modalities");
      if (!modalities.is_array() || modalities.size() != 2) {
        throw ConfigError(reader.child("modalities") + " must list exactly two modalities");
      }
      for (std::size_t i = 0; i < modalities.size(); ++i) {
        s.modalities.push_back(parse_modality(
            modalities[i], reader.child("modalities") + "[" + std::to_string(i) + "]",
            s.input_dim));
      }
      if (s.modalities[0].name == s.modalities[1].name) {
        throw ConfigError(reader.child("modalities") + " names must be distinct");
      }
      reader.finish();
      config.data = std::move(s);
    } else {
      ObjectReader reader(*files, data.child("files"));
      FileDataConfig f;
      const json& paths = reader.require("paths");
      if (!paths.is_array() || paths.empty() || paths.size() > 2) {
        throw ConfigError(reader.child("paths") +
                          " must list one merged dataset or one dataset per modality");
      }
      for (std::size_t i = 0; i < paths.size(); ++i) {
        f.paths.emplace_back(
            as_string(paths[i], reader.child("paths") + "[" + std::to_string(i) + "]"));
      }
      if (const json* fr = reader.optional("test_fraction")) {
        f.test_fraction = as_double(*fr, reader.child("test_fraction"));
      }
      if (!(f.test_fraction > 0.0 && f.test_fraction < 1.0)) {
        throw ConfigError(reader.child("test_fraction") + " must lie in (0, 1)");
      }
      f.split_seed = as_seed(reader.require("split_seed"), reader.child("split_seed"));
      reader.finish();
      config.data = std::move(f);
    }
    data.finish();
  }

  // federation + topology
  {
    ObjectReader reader(root.require("federation"), root.child("federation"));
    FederationConfig& fed = config.federation;
    fed.rounds = as_positive_int(reader.require("rounds"), reader.child("rounds"));
    fed.epochs = as_positive_int(reader.require("epochs"), reader.child("epochs"));
    fed.batch_size = as_positive_int(reader.require("batch_size"), reader.child("batch_size"));
    fed.optimizer = parse_optimizer(reader.require("optimizer"), reader.child("optimizer"));
    if (const json* w = reader.optional("client_weighting")) {
      fed.client_weighting =
          parse_weighting(as_string(*w, reader.child("client_weighting")),
                          reader.child("client_weighting"));
    }
    if (const json* d = reader.optional("dropout_probability")) {
      fed.dropout_probability = as_double(*d, reader.child("dropout_probability"));
      if (!(fed.dropout_probability >= 0.0 && fed.dropout_probability < 1.0)) {
        throw ConfigError(reader.child("dropout_probability") + " must lie in [0, 1)");
      }
    }
    if (const json* e = reader.optional("early_stop")) {
      fed.early_stop = parse_early_stop(*e, reader.child("early_stop"));
    }
    if (const json* a = reader.optional("augment_noise_sigma")) {
      fed.augment_noise_sigma = as_double(*a, reader.child("augment_noise_sigma"));
      if (fed.augment_noise_sigma < 0.0) {
        throw ConfigError(reader.child("augment_noise_sigma") + " must be non-negative");
      }
    }
    const json& clients = reader.require("clients_per_cluster");
    if (!clients.is_array() || clients.empty()) {
      throw ConfigError(reader.child("clients_per_cluster") + " must be a non-empty array");
    }
    for (std::size_t i = 0; i < clients.size(); ++i) {
      config.clients_per_cluster.push_back(as_positive_int(
          clients[i], reader.child("clients_per_cluster") + "[" + std::to_string(i) + "]"));
    }
    reader.finish();
  }

  if (const auto* synthetic = std::get_if<SyntheticDataConfig>(&config.data)) {
    if (synthetic->modalities.size() != config.clients_per_cluster.size()) {
      throw ConfigError("$.federation.clients_per_cluster must have one entry per modality");
    }
  }

  // regimes, seeds, output
  {
    const json& regimes = root.require("regimes");
    if (!regimes.is_array() || regimes.empty()) {
      throw ConfigError("$.regimes must be a non-empty array");
    }
    for (std::size_t i = 0; i < regimes.size(); ++i) {
      const std::string path = "$.regimes[" + std::to_string(i) + "]";
      const Regime regime = parse_regime(as_string(regimes[i], path), path);
      if (std::find(config.regimes.begin(), config.regimes.end(), regime) !=
          config.regimes.end()) {
        throw ConfigError(path + " duplicates an earlier regime");
      }
      config.regimes.push_back(regime);
    }

    const json& seeds = root.require("seeds");
    if (!seeds.is_array() || seeds.empty()) {
      throw ConfigError("$.seeds must be a non-empty array");
    }
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const std::string path = "$.seeds[" + std::to_string(i) + "]";
      const std::uint64_t seed = as_seed(seeds[i], path);
      if (std::find(config.seeds.begin(), config.seeds.end(), seed) != config.seeds.end()) {
        throw ConfigError(path + " duplicates an earlier seed");
      }
      config.seeds.push_back(seed);
    }

    if (const json* out = root.optional("output_dir")) {
      config.output_dir = as_string(*out, "$.output_dir");
    }
  }

  root.finish();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file " + path.string());
  }
  json document;
  try {
    document = json::parse(in, nullptr, true, /*ignore_comments=*/false);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(document);
}

nlohmann::json to_json(const ExperimentConfig& config) {
  json data;
  if (const auto* synthetic = std::get_if<SyntheticDataConfig>(&config.data)) {
    json modalities = json::array();
    for (const ModalitySpec& m : synthetic->modalities) {
      modalities.push_back({{"name", m.name},
                            {"class_means",
                             {{"negative", m.class_means[0]}, {"positive", m.class_means[1]}}},
                            {"class_scales",
                             {{"negative", m.class_scales[0]}, {"positive", m.class_scales[1]}}},
                            {"negative_count", m.negative_count},
                            {"positive_count", m.positive_count},
                            {"noise_seed", m.noise_seed}});
    }
    data["synthetic"] = {{"input_dim", synthetic->input_dim},
                         {"test_fraction", synthetic->test_fraction},
                         {"split_seed", synthetic->split_seed},
                         {"modalities", std::move(modalities)}};
  } else {
    const auto& files = std::get<FileDataConfig>(config.data);
    json paths = json::array();
    for (const auto& p : files.paths) paths.push_back(p.string());
    data["files"] = {{"paths", std::move(paths)},
                     {"test_fraction", files.test_fraction},
                     {"split_seed", files.split_seed}};
  }

  json model = {{"architecture", architecture_name(config.model.architecture)},
                {"input_dim", config.model.input_dim},
                {"init_seed", config.model.init_seed},
                {"loss",
                 {{"kind", loss_kind_name(config.model.loss.kind)},
                  {"alpha", config.model.loss.alpha},
                  {"gamma", config.model.loss.gamma}}}};
  if (config.model.architecture == Architecture::Mlp) {
    model["hidden_units"] = config.model.hidden_units;
    model["activation"] = activation_name(config.model.activation);
  }

  const FederationConfig& fed = config.federation;
  json federation = {{"rounds", fed.rounds},
                     {"epochs", fed.epochs},
                     {"batch_size", fed.batch_size},
                     {"optimizer",
                      {{"kind", optimizer_kind_name(fed.optimizer.kind)},
                       {"learning_rate", fed.optimizer.learning_rate},
                       {"adam_beta1", fed.optimizer.adam_beta1},
                       {"adam_beta2", fed.optimizer.adam_beta2},
                       {"adam_epsilon", fed.optimizer.adam_epsilon}}},
                     {"client_weighting", weighting_name(fed.client_weighting)},
                     {"dropout_probability", fed.dropout_probability},
                     {"early_stop",
                      {{"enabled", fed.early_stop.enabled},
                       {"patience", fed.early_stop.patience},
                       {"min_delta", fed.early_stop.min_delta}}},
                     {"augment_noise_sigma", fed.augment_noise_sigma},
                     {"clients_per_cluster", config.clients_per_cluster}};

  json regimes = json::array();
  for (Regime r : config.regimes) regimes.push_back(regime_name(r));

  return json{{"data", std::move(data)},
              {"model", std::move(model)},
              {"federation", std::move(federation)},
              {"regimes", std::move(regimes)},
              {"seeds", config.seeds},
              {"output_dir", config.output_dir.string()}};
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig config;

  SyntheticDataConfig synthetic;
  synthetic.input_dim = 32;
  synthetic.test_fraction = 0.2;
  synthetic.split_seed = 20260810;
  synthetic.modalities = default_benchmark_modalities();
  config.data = std::move(synthetic);

  config.model.architecture = Architecture::Mlp;
  config.model.hidden_units = 32;
  config.model.activation = Activation::Tanh;
  config.model.input_dim = 32;
  config.model.init_seed = 2026;
  config.model.loss = LossSpec{LossKind::Focal, 0.5, 2.0};

  config.federation.rounds = 30;
  config.federation.epochs = 5;
  config.federation.batch_size = 16;
  config.federation.optimizer =
      OptimizerSpec{OptimizerKind::Adam, 1e-4, 0.9, 0.999, 1e-8};
  config.federation.client_weighting = ClientWeighting::BySampleCount;
  config.federation.dropout_probability = 0.0;
  config.federation.early_stop = EarlyStopConfig{false, 5, 1e-4};

  config.clients_per_cluster = {3, 3};
  config.regimes = {Regime::SpecializedFL, Regime::ConventionalFL, Regime::ClusteredFL};
  config.seeds = {1, 2, 3, 4, 5};
  config.output_dir = "results";
  return config;
}

nlohmann::json to_json(const EvalReport& report) {
  const auto confusion_json = [](const ConfusionMatrix& m) {
    return json{{"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}};
  };
  const auto class_json = [](const ClassMetrics& c) {
    return json{{"precision", c.precision},
                {"recall", c.recall},
                {"f1", c.f1},
                {"zero_division", c.zero_division}};
  };
  json per_modality = json::array();
  for (const ModalityReport& m : report.per_modality) {
    per_modality.push_back({{"tag", m.tag},
                            {"confusion", confusion_json(m.confusion)},
                            {"covid", class_json(m.covid)},
                            {"healthy", class_json(m.healthy)},
                            {"macro_f1", m.macro_f1},
                            {"loss_sum", m.loss_sum},
                            {"sample_count", m.sample_count}});
  }
  return json{{"confusion", confusion_json(report.confusion)},
              {"covid", class_json(report.covid)},
              {"healthy", class_json(report.healthy)},
              {"macro_precision", report.macro_precision},
              {"macro_recall", report.macro_recall},
              {"macro_f1", report.macro_f1},
              {"weighted_precision", report.weighted_precision},
              {"weighted_recall", report.weighted_recall},
              {"weighted_f1", report.weighted_f1},
              {"accuracy", report.accuracy},
              {"mean_loss", report.mean_loss},
              {"zero_division", report.zero_division},
              {"per_modality", std::move(per_modality)}};
}

nlohmann::json to_json(const RoundRecord& record) {
  return json{{"round", record.round},
              {"regime", regime_name(record.regime)},
              {"loss", record.loss},
              {"accuracy", record.accuracy},
              {"participants", record.participants},
              {"duration_seconds", record.duration_seconds},
              {"report", to_json(record.report)}};
}

FederatedData build_run_data(const ExperimentConfig& config, std::uint64_t master_seed) {
  PartitionPlan plan;
  plan.clients_per_cluster = config.clients_per_cluster;

  std::vector<Dataset> modalities;
  if (const auto* synthetic = std::get_if<SyntheticDataConfig>(&config.data)) {
    plan.test_fraction = synthetic->test_fraction;
    plan.split_seed = derive_seed(master_seed, Stream::Split, synthetic->split_seed);
    for (ModalitySpec spec : synthetic->modalities) {
      spec.noise_seed = derive_seed(master_seed, Stream::ModalityNoise, spec.noise_seed);
      modalities.push_back(generate_modality(spec));
    }
  } else {
    const auto& files = std::get<FileDataConfig>(config.data);
    plan.test_fraction = files.test_fraction;
    plan.split_seed = derive_seed(master_seed, Stream::Split, files.split_seed);
    for (const auto& path : files.paths) {
      const Dataset whole = read_dataset(path);
      if (files.paths.size() == 1) {
        // One merged file: split it into per-modality datasets by tag.
        for (const std::string& tag : whole.distinct_tags()) {
          std::vector<Sample> subset;
          for (const Sample& s : whole.samples()) {
            if (s.modality_tag == tag) subset.push_back(s);
          }
          modalities.emplace_back(std::move(subset), whole.input_dim());
        }
      } else {
        modalities.push_back(whole);
      }
    }
    if (modalities.size() != config.clients_per_cluster.size()) {
      throw ConfigError("dataset files provide " + std::to_string(modalities.size()) +
                        " modalities but clients_per_cluster lists " +
                        std::to_string(config.clients_per_cluster.size()));
    }
    for (const Dataset& m : modalities) {
      if (m.input_dim() != config.model.input_dim) {
        throw ConfigError("dataset input_dim " + std::to_string(m.input_dim()) +
                          " does not match model input_dim " +
                          std::to_string(config.model.input_dim));
      }
    }
  }
  return prepare_federated_data(modalities, plan);
}

RunOutput run_single(const ExperimentConfig& config, Regime regime, std::uint64_t master_seed,
                     int threads, const std::optional<ParameterVector>& initial_weights) {
  FederatedData data = build_run_data(config, master_seed);

  ModelSpec model = config.model;
  model.init_seed = derive_seed(master_seed, Stream::ParamInit, config.model.init_seed);

  FederationConfig fed = config.federation;
  fed.master_seed = master_seed;
  fed.threads = threads;

  Federation federation(make_topology(config.clients_per_cluster, regime), fed, model,
                        std::move(data.client_shards), std::move(data.cluster_tests),
                        initial_weights);

  RunOutput out;
  out.regime = regime;
  out.seed = master_seed;
  out.result = federation.run();
  if (out.result.records.empty()) {
    // Nothing completed; there are no partial records worth preserving.
    throw AggregationError(regime_name(regime) + " seed " + std::to_string(master_seed) +
                           " failed in round 1: " + *out.result.aborted);
  }
  out.final_report = out.result.records[out.result.best_round_index].report;
  out.csv_name = "rounds_" + regime_name(regime) + "_" + std::to_string(master_seed) + ".csv";
  return out;
}

ResultBundle run_all(const ExperimentConfig& config, int threads,
                     const std::optional<ParameterVector>& initial_weights) {
  ResultBundle bundle;
  for (Regime regime : config.regimes) {
    for (std::uint64_t seed : config.seeds) {
      bundle.runs.push_back(run_single(config, regime, seed, threads, initial_weights));
    }
  }
  return bundle;
}

std::string round_csv(const RunOutput& run) {
  std::ostringstream out;
  out << "round,loss,accuracy,precision_covid,recall_covid,f1_covid,precision_healthy,"
         "recall_healthy,f1_healthy,macro_f1,f1_xray_modality,f1_ultrasound_modality,"
         "participants\n";
  for (const RoundRecord& record : run.result.records) {
    const EvalReport& r = record.report;
    out << record.round << ',' << fmt17(record.loss) << ',' << fmt17(record.accuracy) << ','
        << fmt17(r.covid.precision) << ',' << fmt17(r.covid.recall) << ',' << fmt17(r.covid.f1)
        << ',' << fmt17(r.healthy.precision) << ',' << fmt17(r.healthy.recall) << ','
        << fmt17(r.healthy.f1) << ',' << fmt17(r.macro_f1) << ',';
    out << fmt17(r.per_modality.size() > 0 ? r.per_modality[0].macro_f1 : 0.0) << ',';
    out << fmt17(r.per_modality.size() > 1 ? r.per_modality[1].macro_f1 : 0.0) << ',';
    for (std::size_t i = 0; i < record.participants.size(); ++i) {
      if (i > 0) out << ';';
      out << record.participants[i];
    }
    out << '\n';
  }
  return out.str();
}

nlohmann::json summary_json(const ResultBundle& bundle) {
  json runs = json::array();
  for (const RunOutput& run : bundle.runs) {
    json rounds = json::array();
    for (const RoundRecord& record : run.result.records) {
      rounds.push_back(to_json(record));
    }
    json early = nullptr;
    if (run.result.early_stop) {
      early = {{"best_index", run.result.early_stop->best_index},
               {"triggered_index", run.result.early_stop->triggered_index}};
    }
    runs.push_back({{"regime", regime_name(run.regime)},
                    {"seed", run.seed},
                    {"csv", run.csv_name},
                    {"best_round", run.result.records[run.result.best_round_index].round},
                    {"early_stop", std::move(early)},
                    {"aborted", run.result.aborted ? json(*run.result.aborted) : json(nullptr)},
                    {"final", to_json(run.final_report)},
                    {"rounds", std::move(rounds)}});
  }

  json aggregates = json::array();
  for (Regime regime :
       {Regime::SpecializedFL, Regime::ConventionalFL, Regime::ClusteredFL}) {
    std::vector<double> scores;
    for (const RunOutput& run : bundle.runs) {
      if (run.regime == regime) scores.push_back(run.final_report.macro_f1);
    }
    if (scores.empty()) continue;
    const double mean =
        std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
    double variance = 0.0;
    for (double s : scores) variance += (s - mean) * (s - mean);
    const double stddev =
        scores.size() > 1 ? std::sqrt(variance / static_cast<double>(scores.size() - 1)) : 0.0;
    aggregates.push_back({{"regime", regime_name(regime)},
                          {"seeds", scores.size()},
                          {"macro_f1_mean", mean},
                          {"macro_f1_stddev", stddev}});
  }
  return json{{"runs", std::move(runs)}, {"aggregates", std::move(aggregates)}};
}

std::string comparison_table(const ResultBundle& bundle) {
  if (bundle.runs.empty()) {
    return "no completed runs\n";
  }

  std::vector<Regime> regimes;
  for (const RunOutput& run : bundle.runs) {
    if (std::find(regimes.begin(), regimes.end(), run.regime) == regimes.end()) {
      regimes.push_back(run.regime);
    }
  }
  std::vector<std::string> modalities;
  for (const ModalityReport& m : bundle.runs.front().final_report.per_modality) {
    modalities.push_back(m.tag);
  }

  // Per (regime, modality, class): P/R/F1 averaged across seeds.
  struct Cell {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    int n = 0;
  };
  const auto cell_for = [&](Regime regime, const std::string& tag, int label) {
    Cell cell;
    for (const RunOutput& run : bundle.runs) {
      if (run.regime != regime) continue;
      for (const ModalityReport& m : run.final_report.per_modality) {
        if (m.tag != tag) continue;
        const ClassMetrics& c = label == 1 ? m.covid : m.healthy;
        cell.precision += c.precision;
        cell.recall += c.recall;
        cell.f1 += c.f1;
        cell.n += 1;
      }
    }
    if (cell.n > 0) {
      cell.precision /= cell.n;
      cell.recall /= cell.n;
      cell.f1 /= cell.n;
    }
    return cell;
  };

  const auto title = [](Regime r) {
    switch (r) {
      case Regime::SpecializedFL: return "Specialized FL";
      case Regime::ConventionalFL: return "Conventional FL";
      case Regime::ClusteredFL: return "Clustered FL";
    }
    return "";
  };

  std::ostringstream out;
  char line[256];
  out << "Per-class precision / recall / F1 on the merged test set (mean across seeds)\n\n";
  std::snprintf(line, sizeof(line), "%-12s %-10s", "Dataset", "Class");
  out << line;
  for (Regime r : regimes) {
    std::snprintf(line, sizeof(line), " | %-20s", title(r));
    out << line;
  }
  out << '\n';
  std::snprintf(line, sizeof(line), "%-12s %-10s", "", "");
  out << line;
  for (std::size_t i = 0; i < regimes.size(); ++i) {
    std::snprintf(line, sizeof(line), " | %-6s%-6s%-8s", "Prec", "Rec", "F1");
    out << line;
  }
  out << '\n';
  for (const std::string& tag : modalities) {
    for (int label : {1, 0}) {
      std::snprintf(line, sizeof(line), "%-12s %-10s", tag.c_str(),
                    label == 1 ? "COVID-19" : "Healthy");
      out << line;
      for (Regime r : regimes) {
        const Cell cell = cell_for(r, tag, label);
        std::snprintf(line, sizeof(line), " | %-6s%-6s%-8s", fmt2(cell.precision).c_str(),
                      fmt2(cell.recall).c_str(), fmt2(cell.f1).c_str());
        out << line;
      }
      out << '\n';
    }
  }

  out << "\nMacro-F1 on the merged test set, mean +/- stddev across seeds\n";
  const json aggregates = summary_json(bundle)["aggregates"];
  for (const json& a : aggregates) {
    std::snprintf(line, sizeof(line), "  %-14s %s +/- %s\n",
                  a["regime"].get<std::string>().c_str(),
                  fmt2(a["macro_f1_mean"].get<double>()).c_str(),
                  fmt2(a["macro_f1_stddev"].get<double>()).c_str());
    out << line;
  }
  return out.str();
}

namespace {

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ConfigError("output directory not writable: cannot create " + path.string());
  }
  out << content;
  if (!out) {
    throw ConfigError("short write to " + path.string());
  }
}

}  // namespace

void write_outputs(const ResultBundle& bundle, const std::filesystem::path& out_dir,
                   bool save_weights) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw ConfigError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  }

  for (const RunOutput& run : bundle.runs) {
    write_text_file(out_dir / run.csv_name, round_csv(run));
    if (save_weights) {
      for (const auto& [name, weights] : run.result.final_weights) {
        std::string file = "weights_" + regime_name(run.regime) + "_" + std::to_string(run.seed);
        if (name != "global") file += "_" + name;
        file += ".cflw";
        try {
          save_parameters(weights, out_dir / file);
        } catch (const FormatError& e) {
          throw ConfigError(e.what());
        }
      }
    }
  }
  write_text_file(out_dir / "summary.json", summary_json(bundle).dump(2) + "\n");
  write_text_file(out_dir / "comparison.txt", comparison_table(bundle));
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Clustered federated learning simulator for bimodal COVID-19 classification"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  std::string emit_path;
  std::string load_weights_path;
  std::string dataset_override;
  int threads = 0;
  bool save_weights = false;

  CLI::App* run = app.add_subcommand("run", "Run every configured (regime x seed) experiment");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--out", out_override, "Output directory (overrides the config)");
  run->add_option("--threads", threads, "Worker threads for client training")
      ->envname("CFLSIM_THREADS");
  run->add_option("--dataset", dataset_override,
                  "Ingest a prepared .cfld dataset instead of the configured data source");
  run->add_flag("--save-weights", save_weights, "Write best-round weight checkpoints (.cflw)");
  run->add_option("--load-weights", load_weights_path,
                  "Start every run from this weight checkpoint instead of a fresh init");

  CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic benchmark dataset");
  gen->add_option("--config", config_path, "Experiment config (JSON)")->required();
  gen->add_option("--emit-dataset", emit_path, "Destination .cfld file")->required();

  CLI::App* validate = app.add_subcommand("validate", "Validate a config and print it resolved");
  validate->add_option("--config", config_path, "Experiment config (JSON)")->required();

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    ExperimentConfig config = load_config(config_path);

    if (validate->parsed()) {
      std::cout << to_json(config).dump(2) << "\n";
      return 0;
    }

    if (gen->parsed()) {
      const auto* synthetic = std::get_if<SyntheticDataConfig>(&config.data);
      if (synthetic == nullptr) {
        throw ConfigError("gen-data needs a config with synthetic data");
      }
      std::vector<Dataset> modalities;
      for (const ModalitySpec& spec : synthetic->modalities) {
        modalities.push_back(generate_modality(spec));
      }
      const Dataset merged = merge_test_sets(modalities);
      write_dataset(merged, emit_path);
      std::cout << "wrote " << merged.size() << " samples ("
                << merged.count_label(1) << " positive) to " << emit_path << "\n";
      return 0;
    }

    if (!out_override.empty()) {
      config.output_dir = out_override;
    }
    if (!dataset_override.empty()) {
      FileDataConfig files;
      files.paths = {dataset_override};
      std::visit(
          [&](const auto& current) {
            files.test_fraction = current.test_fraction;
            files.split_seed = current.split_seed;
          },
          config.data);
      config.data = std::move(files);
    }
    if (threads <= 0) {
      threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    }
    std::optional<ParameterVector> initial;
    if (!load_weights_path.empty()) {
      initial = load_parameters(load_weights_path);
    }

    ResultBundle bundle;
    bool any_aborted = false;
    for (Regime regime : config.regimes) {
      for (std::uint64_t seed : config.seeds) {
        RunOutput run_output = run_single(config, regime, seed, threads, initial);
        const RoundRecord& best =
            run_output.result.records[run_output.result.best_round_index];
        std::cout << regime_name(regime) << " seed " << seed << ": "
                  << run_output.result.records.size() << " rounds, best round " << best.round
                  << ", macro-F1 " << fmt2(best.report.macro_f1) << "\n";
        if (run_output.result.aborted) {
          any_aborted = true;
          std::cerr << regime_name(regime) << " seed " << seed
                    << " aborted: " << *run_output.result.aborted << "\n";
        }
        bundle.runs.push_back(std::move(run_output));
      }
    }
    write_outputs(bundle, config.output_dir, save_weights);
    std::cout << "\n" << comparison_table(bundle);
    std::cout << "\nresults written to " << config.output_dir.string() << "\n";
    return any_aborted ? 3 : 0;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace cfl
