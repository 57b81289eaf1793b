#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pwa/error.hpp"

namespace pwa {

/// One image's C x H x W post-ReLU activations, stored channel-major then
/// row-major (index = c*H*W + y*W + x). Immutable once constructed; the
/// constructor enforces shape, finiteness and non-negativity.
class FeatureMapTensor {
 public:
  FeatureMapTensor(std::uint32_t channels, std::uint32_t height, std::uint32_t width,
                   std::vector<float> values)
      : channels_(channels), height_(height), width_(width), values_(std::move(values)) {
    if (channels_ == 0 || height_ == 0 || width_ == 0)
      throw Error(ErrorKind::InvalidShape, "tensor dimensions must be >= 1");
    const auto expected = std::uint64_t(channels_) * height_ * width_;
    if (values_.size() != expected)
      throw Error(ErrorKind::InvalidShape, "payload has " + std::to_string(values_.size()) +
                                               " values, dims imply " + std::to_string(expected));
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i]))
        throw Error(ErrorKind::NonFinite, "non-finite activation at index " + std::to_string(i));
      if (values_[i] < 0.0f)
        throw Error(ErrorKind::NegativeActivation,
                    "negative activation at index " + std::to_string(i));
    }
  }

  static FeatureMapTensor zeros(std::uint32_t channels, std::uint32_t height, std::uint32_t width) {
    return FeatureMapTensor(channels, height, width,
                            std::vector<float>(std::size_t(channels) * height * width, 0.0f));
  }

  std::uint32_t channels() const noexcept { return channels_; }
  std::uint32_t height() const noexcept { return height_; }
  std::uint32_t width() const noexcept { return width_; }
  std::size_t plane_size() const noexcept { return std::size_t(height_) * width_; }

  std::span<const float> values() const noexcept { return values_; }

  std::span<const float> channel(std::uint32_t c) const {
    if (c >= channels_)
      throw Error(ErrorKind::InvalidArgument, "channel " + std::to_string(c) + " out of range [0, " +
                                                  std::to_string(channels_) + ")");
    return std::span<const float>(values_).subspan(c * plane_size(), plane_size());
  }

  float at(std::uint32_t c, std::uint32_t y, std::uint32_t x) const {
    return values_[c * plane_size() + std::size_t(y) * width_ + x];
  }

  friend bool operator==(const FeatureMapTensor&, const FeatureMapTensor&) = default;

 private:
  std::uint32_t channels_;
  std::uint32_t height_;
  std::uint32_t width_;
  std::vector<float> values_;
};

/// A descriptor as it travels between stages and on disk.
struct DescriptorRecord {
  std::string image_id;
  std::vector<float> values;
  // Set when ||values||_2 = 1 within 1e-4.
  bool normalized = false;

  std::size_t dim() const noexcept { return values.size(); }

  friend bool operator==(const DescriptorRecord&, const DescriptorRecord&) = default;
};

inline double l2_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += double(x) * double(x);
  return std::sqrt(s);
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline constexpr double kUnitNormTolerance = 1e-4;

inline bool is_unit(std::span<const float> v, double tol = kUnitNormTolerance) {
  return std::abs(l2_norm(v) - 1.0) <= tol;
}

}  // namespace pwa
