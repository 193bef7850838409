#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cfl {

/// One labeled example. The modality tag is bookkeeping for per-modality
/// metrics; it is never visible to training.
struct Sample {
  std::vector<double> features;
  int label = 0;  // 1 = COVID-19 (positive), 0 = Healthy
  std::string modality_tag;
};

/// Non-empty collection of samples sharing one feature dimension.
/// Immutable after construction.
class Dataset {
 public:
  Dataset(std::vector<Sample> samples, int input_dim);

  int input_dim() const { return input_dim_; }
  std::size_t size() const { return samples_.size(); }
  std::span<const Sample> samples() const { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }

  std::size_t count_label(int label) const;
  /// Distinct modality tags in first-appearance order.
  std::vector<std::string> distinct_tags() const;

 private:
  std::vector<Sample> samples_;
  int input_dim_;
};

/// Synthetic Gaussian class-conditional generator standing in for one
/// imaging modality. class_means/class_scales are indexed by label.
struct ModalitySpec {
  std::string name;
  int input_dim = 0;
  std::array<std::vector<double>, 2> class_means;
  std::array<double, 2> class_scales = {1.0, 1.0};
  int positive_count = 0;
  int negative_count = 0;
  std::uint64_t noise_seed = 0;
};

/// How training data is split and dealt out to clients.
struct PartitionPlan {
  std::vector<int> clients_per_cluster;  // one entry per cluster/modality
  std::uint64_t split_seed = 0;
  double test_fraction = 0.2;

  int cluster_count() const { return static_cast<int>(clients_per_cluster.size()); }
};

Dataset generate_modality(const ModalitySpec& spec);

/// Stratified 80/20-style split: each class is shuffled and split
/// independently, with round(class_count * test_fraction) test samples.
std::pair<Dataset, Dataset> train_test_split(const Dataset& d, double test_fraction,
                                             std::uint64_t seed);

/// Core of the client partitioner: seeded shuffle per class, then round-robin
/// deal, so shards are disjoint, cover the input, and per-class counts differ
/// by at most one across clients. Returns per-client index lists.
std::vector<std::vector<std::size_t>> partition_indices(std::span<const int> labels,
                                                        int client_count, std::uint64_t seed);

std::vector<Dataset> partition_for_clients(const Dataset& train, int client_count,
                                           std::uint64_t seed);

/// Concatenates per-modality test sets into the server's joint test set,
/// preserving modality tags.
Dataset merge_test_sets(std::span<const Dataset> tests);

// Dataset file encoding ("CFLD"): magic, version u32, sample_count u64,
// input_dim u32, tag table (count u16, length-prefixed UTF-8 strings), then
// per sample: tag index u16, label u8, features as 32-bit little-endian
// IEEE-754. Features are stored at 32-bit precision; memory stays 64-bit.
void write_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// Everything a federation needs: disjoint shards in global client order
/// (cluster-major), per-cluster test sets, and the merged multimodal test set.
struct FederatedData {
  std::vector<Dataset> client_shards;
  std::vector<Dataset> cluster_tests;
  std::vector<Dataset> cluster_trains;
  std::vector<std::string> modality_names;
  std::vector<int> clients_per_cluster;

  Dataset merged_test() const { return merge_test_sets(cluster_tests); }
};

FederatedData prepare_federated_data(std::span<const Dataset> modality_datasets,
                                     const PartitionPlan& plan);

/// The default bimodal benchmark: two modalities with class-mean separation
/// vectors rotated 90 degrees from each other and the class imbalance of the
/// X-ray-like (223:1341) and ultrasound-like (399:146) corpora.
std::vector<ModalitySpec> default_benchmark_modalities();

}  // namespace cfl
