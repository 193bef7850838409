#include "cfl/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "byte_io.hpp"
#include "cfl/errors.hpp"

namespace cfl {

namespace {

constexpr char kMagic[4] = {'C', 'F', 'L', 'W'};
constexpr std::uint32_t kFormatVersion = 1;

}  // namespace

ParameterVector::ParameterVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) {
    throw DimensionError("parameter vector must be non-empty");
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw NumericError("non-finite parameter at index " + std::to_string(i));
    }
  }
}

ParameterVector ParameterVector::zeros(std::size_t length) {
  return ParameterVector(std::vector<double>(length, 0.0));
}

ParameterVector weighted_mean(std::span<const ParameterVector> vectors,
                              std::span<const double> weights) {
  if (vectors.empty()) {
    throw AggregationError("weighted_mean of zero vectors");
  }
  if (weights.size() != vectors.size()) {
    throw DimensionError("weight count " + std::to_string(weights.size()) +
                         " does not match vector count " + std::to_string(vectors.size()));
  }
  const std::size_t length = vectors[0].size();
  for (std::size_t i = 1; i < vectors.size(); ++i) {
    if (vectors[i].size() != length) {
      throw DimensionError("vector " + std::to_string(i) + " has length " +
                           std::to_string(vectors[i].size()) + ", expected " +
                           std::to_string(length));
    }
  }
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!std::isfinite(weights[i]) || weights[i] < 0.0) {
      throw NumericError("weight " + std::to_string(i) + " is negative or non-finite");
    }
    weight_sum += weights[i];
  }
  if (weight_sum <= 0.0) {
    throw AggregationError("degenerate aggregation: weight sum is zero");
  }

  const std::span<const double> base = vectors[0].values();
  std::vector<double> delta(length, 0.0);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const std::span<const double> v = vectors[i].values();
    const double w = weights[i];
    for (std::size_t j = 0; j < length; ++j) {
      delta[j] += w * (v[j] - base[j]);
    }
  }
  std::vector<double> result(length);
  for (std::size_t j = 0; j < length; ++j) {
    result[j] = base[j] + delta[j] / weight_sum;
  }
  return ParameterVector(std::move(result));  // ctor rejects non-finite results
}

std::vector<std::byte> serialize(const ParameterVector& v) {
  std::vector<std::byte> out;
  out.reserve(4 + 4 + 8 + 8 * v.size());
  detail::append_bytes(out, kMagic, 4);
  detail::append_value(out, kFormatVersion);
  detail::append_value(out, static_cast<std::uint64_t>(v.size()));
  detail::append_bytes(out, v.values().data(), 8 * v.size());
  return out;
}

ParameterVector deserialize(std::span<const std::byte> bytes) {
  detail::ByteReader reader(bytes);
  char magic[4];
  reader.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("bad magic at byte offset 0: expected \"CFLW\"");
  }
  const auto version = reader.read_value<std::uint32_t>("format version");
  if (version != kFormatVersion) {
    throw FormatError("unsupported weight format version " + std::to_string(version) +
                      " at byte offset 4");
  }
  const auto length = reader.read_value<std::uint64_t>("length");
  if (length == 0) {
    throw FormatError("zero-length parameter vector at byte offset 8");
  }
  if (reader.remaining() != 8 * length) {
    throw FormatError("payload size mismatch at byte offset " + std::to_string(reader.offset()) +
                      ": expected " + std::to_string(8 * length) + " bytes, found " +
                      std::to_string(reader.remaining()));
  }
  std::vector<double> values(length);
  reader.read(values.data(), 8 * length, "values");
  return ParameterVector(std::move(values));
}

void save_parameters(const ParameterVector& v, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw FormatError("cannot open " + path.string() + " for writing");
  }
  const auto bytes = serialize(v);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw FormatError("short write to " + path.string());
  }
}

ParameterVector load_parameters(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open " + path.string() + " for reading");
  }
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(std::as_bytes(std::span<const char>(raw)));
}

}  // namespace cfl
