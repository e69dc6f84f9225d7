#include "flowerase/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace flowerase::io {

std::span<const std::uint8_t> verified_body(std::span<const std::uint8_t> bytes, std::string_view what) {
  if (bytes.size() < 16) throw FormatError(std::string(what) + " truncated");
  const auto body = bytes.subspan(0, bytes.size() - 8);
  if (Reader(bytes.subspan(body.size())).u64() != fnv1a(body)) {
    throw ChecksumError(std::string(what) + " checksum mismatch");
  }
  return body;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to '" + path + "'");
}

}  // namespace flowerase::io
