#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cfl {

/// Flat model weight vector, the unit exchanged between clients and server.
/// Immutable after construction; every element is checked finite.
class ParameterVector {
 public:
  explicit ParameterVector(std::vector<double> values);

  static ParameterVector zeros(std::size_t length);

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }

  bool operator==(const ParameterVector&) const = default;

 private:
  std::vector<double> values_;
};

/// Element-wise Sigma(w_i * v_i) / Sigma(w_i), accumulated in ascending input
/// index order. Computed as v_0 + Sigma(w_i * (v_i - v_0)) / Sigma(w_i) so the
/// mean of identical vectors reproduces them bit-for-bit regardless of count.
ParameterVector weighted_mean(std::span<const ParameterVector> vectors,
                              std::span<const double> weights);

// Weight-checkpoint encoding: magic "CFLW", format version u32, length u64,
// then 64-bit little-endian IEEE-754 values. Round-trip is bit-exact.
std::vector<std::byte> serialize(const ParameterVector& v);
ParameterVector deserialize(std::span<const std::byte> bytes);

void save_parameters(const ParameterVector& v, const std::filesystem::path& path);
ParameterVector load_parameters(const std::filesystem::path& path);

}  // namespace cfl
