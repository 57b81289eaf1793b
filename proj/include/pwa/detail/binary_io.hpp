#pragma once

// Little-endian primitives shared by the PWAT/PWAD/PWAS/PWAW formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pwa/error.hpp"

namespace pwa::detail {

using Magic = std::array<char, 4>;

class ByteWriter {
 public:
  void magic(const Magic& m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }

  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  const std::vector<char>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const char> bytes) : bytes_(bytes) {}

  void expect_magic(const Magic& m) {
    auto got = take(4, "magic");
    if (!std::equal(m.begin(), m.end(), got.begin()))
      throw Error(ErrorKind::BadMagic, "expected '" + std::string(m.begin(), m.end()) + "', found '" +
                                           std::string(got.begin(), got.end()) + "'");
  }

  void expect_version(std::uint32_t version) {
    auto v = u32();
    if (v != version)
      throw Error(ErrorKind::UnsupportedVersion,
                  "version " + std::to_string(v) + " (supported: " + std::to_string(version) + ")");
  }

  std::uint32_t u32() {
    auto b = take(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    auto b = take(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::string str(std::size_t n) {
    auto b = take(n, "string");
    return std::string(b.begin(), b.end());
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  // Fails unless at least `n` bytes are left, without consuming them.
  void require(std::uint64_t n, const char* what) const {
    if (n > remaining())
      throw Error(ErrorKind::Truncated, std::string(what) + ": need " + std::to_string(n) +
                                            " bytes, " + std::to_string(remaining()) + " left");
  }

  void expect_end() const {
    if (remaining() != 0)
      throw Error(ErrorKind::TrailingData, std::to_string(remaining()) + " unexpected trailing bytes");
  }

 private:
  std::span<const char> take(std::size_t n, const char* what) {
    require(n, what);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for reading");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorKind::Io, "read failed on '" + path.string() + "'");
  return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(ErrorKind::Io, "write failed on '" + path.string() + "'");
}

}  // namespace pwa::detail
