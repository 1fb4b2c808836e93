#include "binary.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <iterator>

namespace stconv::detail {

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void check_magic(const std::vector<std::uint8_t>& bytes, std::string_view magic,
                 const std::string& what) {
  if (bytes.size() < magic.size()) {
    throw FormatError(FormatError::Kind::kTruncated, what + ": truncated before magic");
  }
  if (std::memcmp(bytes.data(), magic.data(), magic.size()) != 0) {
    throw FormatError(FormatError::Kind::kBadMagic, what + ": bad magic");
  }
}

void check_crc(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  if (bytes.size() < 4) throw FormatError(FormatError::Kind::kTruncated, what + ": truncated");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (crc32_of(bytes.data(), bytes.size() - 4) != stored) {
    throw FormatError(FormatError::Kind::kChecksum, what + ": CRC mismatch");
  }
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  return bytes;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace stconv::detail
