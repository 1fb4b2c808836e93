// Little-endian byte packing shared by the RVID and STCV containers.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "stconv/error.hpp"

namespace stconv::detail {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n);

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void text(std::string_view s) { raw(s.data(), s.size()); }

  /// Appends the CRC32 of everything written so far.
  void seal() { u32(crc32_of(bytes_.data(), bytes_.size())); }

  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t n, std::string what)
      : data_(data), n_(n), what_(std::move(what)) {}

  void raw(void* out, std::size_t n) {
    if (n > n_ - pos_) {
      throw FormatError(FormatError::Kind::kTruncated,
                        what_ + ": truncated at byte " + std::to_string(pos_));
    }
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; raw(&v, 8); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  std::string text(std::size_t n) {
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  std::size_t remaining() const { return n_ - pos_; }
  std::size_t position() const { return pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t n_;
  std::size_t pos_ = 0;
  std::string what_;
};

void check_magic(const std::vector<std::uint8_t>& bytes, std::string_view magic,
                 const std::string& what);

/// Compares the trailing u32 against the CRC32 of every byte before it.
void check_crc(const std::vector<std::uint8_t>& bytes, const std::string& what);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace stconv::detail
