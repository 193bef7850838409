#pragma once

#include <bit>
#include <cstddef>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "cfl/errors.hpp"

namespace cfl::detail {

// On-disk formats are little-endian; fields are memcpy'd directly.
static_assert(std::endian::native == std::endian::little,
              "big-endian hosts would need byte swapping in the file codecs");

inline void append_bytes(std::vector<std::byte>& out, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::byte*>(data);
  out.insert(out.end(), p, p + n);
}

template <typename T>
void append_value(std::vector<std::byte>& out, const T& value) {
  append_bytes(out, &value, sizeof(T));
}

/// Sequential reader that reports the byte offset of any truncation.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  void read(void* dst, std::size_t n, const char* what) {
    if (n > bytes_.size() - offset_) {
      throw FormatError(std::string("truncated input while reading ") + what +
                        " at byte offset " + std::to_string(offset_));
    }
    std::memcpy(dst, bytes_.data() + offset_, n);
    offset_ += n;
  }

  template <typename T>
  T read_value(const char* what) {
    T value;
    read(&value, sizeof(T), what);
    return value;
  }

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return bytes_.size() - offset_; }

 private:
  std::span<const std::byte> bytes_;
  std::size_t offset_ = 0;
};

}  // namespace cfl::detail
