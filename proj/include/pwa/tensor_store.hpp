#pragma once

// PWAT (feature-map tensor) and PWAD (descriptor list) binary files.
// All integers are u32 little-endian, all floats IEEE-754 little-endian.
//
//   PWAT: "PWAT" | version=1 | C | H | W | C*H*W x f32
//   PWAD: "PWAD" | version=1 | count | dim | count x (id_len | id bytes | dim x f32)

#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

#include "pwa/detail/binary_io.hpp"
#include "pwa/tensor.hpp"

namespace pwa {

inline constexpr detail::Magic kTensorMagic{'P', 'W', 'A', 'T'};
inline constexpr detail::Magic kDescriptorMagic{'P', 'W', 'A', 'D'};
inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr std::uint32_t kDescriptorVersion = 1;

inline std::vector<char> encode_tensor(const FeatureMapTensor& t) {
  detail::ByteWriter w;
  w.magic(kTensorMagic);
  w.u32(kTensorVersion);
  w.u32(t.channels());
  w.u32(t.height());
  w.u32(t.width());
  for (float v : t.values()) w.f32(v);
  return w.bytes();
}

inline FeatureMapTensor decode_tensor(std::span<const char> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kTensorMagic);
  r.expect_version(kTensorVersion);
  const auto c = r.u32();
  const auto h = r.u32();
  const auto w = r.u32();
  if (c == 0 || h == 0 || w == 0)
    throw Error(ErrorKind::InvalidShape, "tensor dimensions must be >= 1");
  const std::uint64_t count = std::uint64_t(c) * h * w;
  r.require(count * 4, "tensor payload");
  std::vector<float> values(count);
  for (auto& v : values) v = r.f32();
  r.expect_end();
  return FeatureMapTensor(c, h, w, std::move(values));
}

/// Refuses to write a tensor that does not satisfy its invariants; a
/// constructed FeatureMapTensor always does.
inline void write_tensor(const std::filesystem::path& path, const FeatureMapTensor& tensor) {
  detail::write_file(path, encode_tensor(tensor));
}

inline FeatureMapTensor read_tensor(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_tensor(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.message());
  }
}

inline std::vector<char> encode_descriptors(std::span<const DescriptorRecord> records) {
  const std::size_t dim = records.empty() ? 0 : records.front().dim();
  for (const auto& r : records) {
    if (r.dim() != dim)
      throw Error(ErrorKind::DimMismatch, "record '" + r.image_id + "' has dim " +
                                              std::to_string(r.dim()) + ", expected " +
                                              std::to_string(dim));
    if (r.image_id.size() > std::numeric_limits<std::uint32_t>::max())
      throw Error(ErrorKind::InvalidArgument, "image id too long");
  }
  if (!records.empty() && dim == 0)
    throw Error(ErrorKind::InvalidShape, "descriptor dim must be >= 1");

  detail::ByteWriter w;
  w.magic(kDescriptorMagic);
  w.u32(kDescriptorVersion);
  w.u32(static_cast<std::uint32_t>(records.size()));
  w.u32(static_cast<std::uint32_t>(dim));
  for (const auto& r : records) {
    w.u32(static_cast<std::uint32_t>(r.image_id.size()));
    w.raw(r.image_id);
    for (float v : r.values) w.f32(v);
  }
  return w.bytes();
}

inline std::vector<DescriptorRecord> decode_descriptors(std::span<const char> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kDescriptorMagic);
  r.expect_version(kDescriptorVersion);
  const auto count = r.u32();
  const auto dim = r.u32();
  if (count > 0 && dim == 0) throw Error(ErrorKind::InvalidShape, "descriptor dim must be >= 1");
  // Each record needs at least 4 + 4*dim bytes; reject absurd counts before allocating.
  r.require(std::uint64_t(count) * (4 + 4 * std::uint64_t(dim)), "descriptor records");

  std::vector<DescriptorRecord> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    DescriptorRecord rec;
    const auto id_len = r.u32();
    rec.image_id = r.str(id_len);
    r.require(std::uint64_t(dim) * 4, "descriptor values");
    rec.values.resize(dim);
    for (auto& v : rec.values) {
      v = r.f32();
      if (!std::isfinite(v))
        throw Error(ErrorKind::NonFinite, "non-finite value in record '" + rec.image_id + "'");
    }
    rec.normalized = is_unit(rec.values);
    out.push_back(std::move(rec));
  }
  r.expect_end();
  return out;
}

inline void write_descriptors(const std::filesystem::path& path,
                              std::span<const DescriptorRecord> records) {
  detail::write_file(path, encode_descriptors(records));
}

inline std::vector<DescriptorRecord> read_descriptors(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_descriptors(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.message());
  }
}

}  // namespace pwa
