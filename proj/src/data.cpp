#include "cfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "byte_io.hpp"
#include "cfl/errors.hpp"
#include "cfl/rng.hpp"

namespace cfl {

namespace {

constexpr char kMagic[4] = {'C', 'F', 'L', 'D'};
constexpr std::uint32_t kFormatVersion = 1;

std::vector<std::size_t> indices_of_label(std::span<const Sample> samples, int label) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].label == label) out.push_back(i);
  }
  return out;
}

}  // namespace

Dataset::Dataset(std::vector<Sample> samples, int input_dim)
    : samples_(std::move(samples)), input_dim_(input_dim) {
  if (input_dim_ <= 0) {
    throw DimensionError("input_dim must be positive");
  }
  if (samples_.empty()) {
    throw DataError("dataset must be non-empty");
  }
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const Sample& s = samples_[i];
    if (static_cast<int>(s.features.size()) != input_dim_) {
      throw DimensionError("sample " + std::to_string(i) + " has " +
                           std::to_string(s.features.size()) + " features, expected " +
                           std::to_string(input_dim_));
    }
    if (s.label != 0 && s.label != 1) {
      throw DataError("sample " + std::to_string(i) + " has non-binary label " +
                      std::to_string(s.label));
    }
    for (double f : s.features) {
      if (!std::isfinite(f)) {
        throw NumericError("non-finite feature in sample " + std::to_string(i));
      }
    }
  }
}

std::size_t Dataset::count_label(int label) const {
  return static_cast<std::size_t>(
      std::count_if(samples_.begin(), samples_.end(),
                    [label](const Sample& s) { return s.label == label; }));
}

std::vector<std::string> Dataset::distinct_tags() const {
  std::vector<std::string> tags;
  for (const Sample& s : samples_) {
    if (std::find(tags.begin(), tags.end(), s.modality_tag) == tags.end()) {
      tags.push_back(s.modality_tag);
    }
  }
  return tags;
}

Dataset generate_modality(const ModalitySpec& spec) {
  if (spec.input_dim <= 0) {
    throw DimensionError("modality input_dim must be positive");
  }
  for (int c = 0; c < 2; ++c) {
    if (static_cast<int>(spec.class_means[c].size()) != spec.input_dim) {
      throw DimensionError("class mean " + std::to_string(c) + " has wrong dimension");
    }
    if (!(spec.class_scales[c] > 0.0)) {
      throw DataError("class scale " + std::to_string(c) + " must be positive");
    }
  }
  if (spec.positive_count < 0 || spec.negative_count < 0 ||
      spec.positive_count + spec.negative_count == 0) {
    throw DataError("modality sample counts must be non-negative and not both zero");
  }

  Rng rng(spec.noise_seed);
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(spec.positive_count + spec.negative_count));
  const std::array<int, 2> counts = {spec.negative_count, spec.positive_count};
  for (int label = 0; label < 2; ++label) {
    for (int i = 0; i < counts[label]; ++i) {
      Sample s;
      s.label = label;
      s.modality_tag = spec.name;
      s.features.resize(static_cast<std::size_t>(spec.input_dim));
      for (int d = 0; d < spec.input_dim; ++d) {
        s.features[static_cast<std::size_t>(d)] =
            spec.class_means[label][static_cast<std::size_t>(d)] +
            spec.class_scales[label] * rng.normal();
      }
      samples.push_back(std::move(s));
    }
  }
  return Dataset(std::move(samples), spec.input_dim);
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& d, double test_fraction,
                                             std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw DataError("test_fraction must lie in (0, 1)");
  }

  Rng rng(seed);
  std::vector<bool> in_test(d.size(), false);
  for (int label = 0; label < 2; ++label) {
    std::vector<std::size_t> idx = indices_of_label(d.samples(), label);
    if (idx.empty()) continue;
    const auto test_count =
        static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * test_fraction));
    if (test_count < 1 || test_count >= idx.size()) {
      throw DataError("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                      " samples, too few to stratify at test_fraction " +
                      std::to_string(test_fraction));
    }
    rng.shuffle(idx);
    for (std::size_t i = 0; i < test_count; ++i) {
      in_test[idx[i]] = true;
    }
  }

  std::vector<Sample> train, test;
  for (std::size_t i = 0; i < d.size(); ++i) {
    (in_test[i] ? test : train).push_back(d[i]);
  }
  return {Dataset(std::move(train), d.input_dim()), Dataset(std::move(test), d.input_dim())};
}

std::vector<std::vector<std::size_t>> partition_indices(std::span<const int> labels,
                                                        int client_count, std::uint64_t seed) {
  if (client_count < 1) {
    throw DataError("client_count must be at least 1");
  }
  const auto clients = static_cast<std::size_t>(client_count);

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> shards(clients);
  for (int label = 0; label < 2; ++label) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == label) idx.push_back(i);
    }
    if (idx.empty()) continue;
    if (idx.size() < clients) {
      throw DataError("cannot partition " + std::to_string(idx.size()) + " samples of class " +
                      std::to_string(label) + " across " + std::to_string(client_count) +
                      " clients");
    }
    rng.shuffle(idx);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      shards[k % clients].push_back(idx[k]);
    }
  }
  for (auto& shard : shards) {
    std::sort(shard.begin(), shard.end());
  }
  return shards;
}

std::vector<Dataset> partition_for_clients(const Dataset& train, int client_count,
                                           std::uint64_t seed) {
  std::vector<int> labels;
  labels.reserve(train.size());
  for (const Sample& s : train.samples()) labels.push_back(s.label);

  const auto index_shards = partition_indices(labels, client_count, seed);
  std::vector<Dataset> shards;
  shards.reserve(index_shards.size());
  for (const auto& indices : index_shards) {
    std::vector<Sample> samples;
    samples.reserve(indices.size());
    for (std::size_t i : indices) samples.push_back(train[i]);
    shards.emplace_back(std::move(samples), train.input_dim());
  }
  return shards;
}

Dataset merge_test_sets(std::span<const Dataset> tests) {
  if (tests.empty()) {
    throw DataError("nothing to merge");
  }
  const int input_dim = tests[0].input_dim();
  std::vector<Sample> merged;
  for (std::size_t i = 0; i < tests.size(); ++i) {
    if (tests[i].input_dim() != input_dim) {
      throw DimensionError("test set " + std::to_string(i) + " has input_dim " +
                           std::to_string(tests[i].input_dim()) + ", expected " +
                           std::to_string(input_dim));
    }
    const auto samples = tests[i].samples();
    merged.insert(merged.end(), samples.begin(), samples.end());
  }
  return Dataset(std::move(merged), input_dim);
}

void write_dataset(const Dataset& d, const std::filesystem::path& path) {
  std::vector<std::string> tags = d.distinct_tags();
  if (tags.size() > 0xFFFF) {
    throw FormatError("too many distinct modality tags for the CFLD format");
  }
  std::map<std::string, std::uint16_t> tag_index;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    tag_index[tags[i]] = static_cast<std::uint16_t>(i);
  }

  std::vector<std::byte> out;
  detail::append_bytes(out, kMagic, 4);
  detail::append_value(out, kFormatVersion);
  detail::append_value(out, static_cast<std::uint64_t>(d.size()));
  detail::append_value(out, static_cast<std::uint32_t>(d.input_dim()));
  detail::append_value(out, static_cast<std::uint16_t>(tags.size()));
  for (const std::string& tag : tags) {
    if (tag.size() > 0xFFFF) {
      throw FormatError("modality tag too long for the CFLD format");
    }
    detail::append_value(out, static_cast<std::uint16_t>(tag.size()));
    detail::append_bytes(out, tag.data(), tag.size());
  }
  for (const Sample& s : d.samples()) {
    detail::append_value(out, tag_index.at(s.modality_tag));
    detail::append_value(out, static_cast<std::uint8_t>(s.label));
    for (double f : s.features) {
      detail::append_value(out, static_cast<float>(f));
    }
  }

  std::ofstream file(path, std::ios::binary);
  if (!file) {
    throw FormatError("cannot open " + path.string() + " for writing");
  }
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) {
    throw FormatError("short write to " + path.string());
  }
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) {
    throw FormatError("cannot open " + path.string() + " for reading");
  }
  std::vector<char> raw((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  detail::ByteReader reader(std::as_bytes(std::span<const char>(raw)));

  char magic[4];
  reader.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path.string() + ": bad magic, expected \"CFLD\"");
  }
  const auto version = reader.read_value<std::uint32_t>("format version");
  if (version != kFormatVersion) {
    throw FormatError(path.string() + ": unsupported dataset format version " +
                      std::to_string(version));
  }
  const auto sample_count = reader.read_value<std::uint64_t>("sample count");
  if (sample_count == 0) {
    throw FormatError(path.string() + ": dataset must be non-empty");
  }
  const auto input_dim = reader.read_value<std::uint32_t>("input_dim");
  if (input_dim == 0) {
    throw FormatError(path.string() + ": input_dim must be positive");
  }
  const auto tag_count = reader.read_value<std::uint16_t>("tag count");
  std::vector<std::string> tags(tag_count);
  for (std::uint16_t i = 0; i < tag_count; ++i) {
    const auto len = reader.read_value<std::uint16_t>("tag length");
    tags[i].resize(len);
    reader.read(tags[i].data(), len, "tag string");
  }

  const std::size_t per_sample = 2 + 1 + 4 * static_cast<std::size_t>(input_dim);
  if (reader.remaining() != per_sample * sample_count) {
    throw FormatError(path.string() + ": payload size mismatch at byte offset " +
                      std::to_string(reader.offset()) + ": expected " +
                      std::to_string(per_sample * sample_count) + " bytes, found " +
                      std::to_string(reader.remaining()));
  }

  std::vector<Sample> samples;
  samples.reserve(sample_count);
  for (std::uint64_t i = 0; i < sample_count; ++i) {
    const auto tag = reader.read_value<std::uint16_t>("tag index");
    if (tag >= tag_count) {
      throw FormatError(path.string() + ": tag index " + std::to_string(tag) +
                        " out of range in sample " + std::to_string(i));
    }
    const auto label = reader.read_value<std::uint8_t>("label");
    if (label > 1) {
      throw FormatError(path.string() + ": non-binary label " + std::to_string(label) +
                        " in sample " + std::to_string(i));
    }
    Sample s;
    s.label = label;
    s.modality_tag = tags[tag];
    s.features.resize(input_dim);
    for (std::uint32_t d = 0; d < input_dim; ++d) {
      s.features[d] = static_cast<double>(reader.read_value<float>("feature"));
    }
    samples.push_back(std::move(s));
  }
  return Dataset(std::move(samples), static_cast<int>(input_dim));
}

FederatedData prepare_federated_data(std::span<const Dataset> modality_datasets,
                                     const PartitionPlan& plan) {
  if (modality_datasets.size() != plan.clients_per_cluster.size()) {
    throw DataError("plan lists " + std::to_string(plan.clients_per_cluster.size()) +
                    " clusters but " + std::to_string(modality_datasets.size()) +
                    " modality datasets were provided");
  }

  FederatedData out;
  out.clients_per_cluster = plan.clients_per_cluster;
  for (std::size_t i = 0; i < modality_datasets.size(); ++i) {
    const Dataset& modality = modality_datasets[i];
    const auto tags = modality.distinct_tags();
    out.modality_names.push_back(tags.front());

    auto [train, test] =
        train_test_split(modality, plan.test_fraction,
                         derive_seed(plan.split_seed, Stream::Split, static_cast<std::uint64_t>(i)));
    auto shards = partition_for_clients(
        train, plan.clients_per_cluster[i],
        derive_seed(plan.split_seed, Stream::Partition, static_cast<std::uint64_t>(i)));
    for (auto& shard : shards) {
      out.client_shards.push_back(std::move(shard));
    }
    out.cluster_trains.push_back(std::move(train));
    out.cluster_tests.push_back(std::move(test));
  }
  return out;
}

std::vector<ModalitySpec> default_benchmark_modalities() {
  constexpr int kDim = 32;
  const auto axis_mean = [](int axis, double value) {
    std::vector<double> mean(kDim, 0.0);
    mean[static_cast<std::size_t>(axis)] = value;
    return mean;
  };

  // Separation vectors lie along orthogonal axes, so a model fit on one
  // modality carries no signal for the other. The smaller ultrasound-like
  // corpus gets the sharper geometry so thirty rounds suffice for the
  // cluster-aware regimes to converge on it.
  ModalitySpec xray;
  xray.name = "xray";
  xray.input_dim = kDim;
  xray.class_means = {axis_mean(0, -2.5), axis_mean(0, 2.5)};
  xray.class_scales = {1.0, 1.0};
  xray.positive_count = 223;
  xray.negative_count = 1341;
  xray.noise_seed = 0xC0FFEE01;

  ModalitySpec ultrasound;
  ultrasound.name = "ultrasound";
  ultrasound.input_dim = kDim;
  ultrasound.class_means = {axis_mean(1, -5.0), axis_mean(1, 5.0)};
  ultrasound.class_scales = {0.6, 0.6};
  ultrasound.positive_count = 399;
  ultrasound.negative_count = 146;
  ultrasound.noise_seed = 0xC0FFEE02;

  return {xray, ultrasound};
}

}  // namespace cfl
