#pragma once

// Part-based weighting aggregation of one feature-map tensor.
//
// For each selected channel n the activations v_n are turned into spatial
// weights
//
//   w_n(x,y) = ( v_n(x,y) / (sum_xy v_n(x,y)^alpha)^(1/alpha) )^(1/beta)
//
// which then weight a sum pooling of every channel. The N resulting
// C-dimensional blocks are concatenated in detector order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pwa/detector_selection.hpp"
#include "pwa/tensor.hpp"

namespace pwa {

inline constexpr double kDefaultAlpha = 2.0;
inline constexpr double kDefaultBeta = 2.0;

struct WeightMap {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t source_channel = 0;
  std::vector<double> weights;  // row-major, index = y*W + x
};

struct RawDescriptor {
  std::string image_id;
  std::uint32_t detector_count = 0;
  std::uint32_t channel_count = 0;
  // Block n occupies [n*C, (n+1)*C).
  std::vector<double> values;

  std::span<const double> block(std::size_t n) const {
    return std::span<const double>(values).subspan(n * channel_count, channel_count);
  }
};

inline void check_exponents(double alpha, double beta) {
  if (!(alpha > 0.0) || !(beta > 0.0) || !std::isfinite(alpha) || !std::isfinite(beta))
    throw Error(ErrorKind::InvalidArgument, "alpha and beta must be finite and > 0");
}

/// An identically zero channel yields an all-zero map: the region then
/// contributes nothing to the descriptor.
inline WeightMap compute_weights(const FeatureMapTensor& tensor, std::uint32_t channel,
                                 double alpha = kDefaultAlpha, double beta = kDefaultBeta) {
  check_exponents(alpha, beta);
  const auto v = tensor.channel(channel);

  WeightMap map{tensor.height(), tensor.width(), channel, std::vector<double>(v.size(), 0.0)};

  double power_sum = 0.0;
  for (float x : v) power_sum += std::pow(double(x), alpha);
  const double norm = std::pow(power_sum, 1.0 / alpha);
  if (!(norm > 0.0)) return map;

  const double inv_beta = 1.0 / beta;
  for (std::size_t i = 0; i < v.size(); ++i) map.weights[i] = std::pow(double(v[i]) / norm, inv_beta);
  return map;
}

/// psi[c] = sum_xy w(x,y) * f(c,x,y).
inline std::vector<double> aggregate_region(const FeatureMapTensor& tensor, const WeightMap& weights) {
  if (weights.height != tensor.height() || weights.width != tensor.width() ||
      weights.weights.size() != tensor.plane_size())
    throw Error(ErrorKind::DimMismatch, "weight map " + std::to_string(weights.height) + "x" +
                                            std::to_string(weights.width) + " vs tensor " +
                                            std::to_string(tensor.height()) + "x" +
                                            std::to_string(tensor.width()));
  std::vector<double> psi(tensor.channels(), 0.0);
  for (std::uint32_t c = 0; c < tensor.channels(); ++c) {
    const auto f = tensor.channel(c);
    double acc = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) acc += weights.weights[i] * double(f[i]);
    psi[c] = acc;
  }
  return psi;
}

inline RawDescriptor aggregate_pwa(const FeatureMapTensor& tensor, const DetectorSet& detectors,
                                   double alpha = kDefaultAlpha, double beta = kDefaultBeta,
                                   std::string image_id = {}) {
  if (detectors.source_channels() != tensor.channels())
    throw Error(ErrorKind::DimMismatch, "detectors were fitted on " +
                                            std::to_string(detectors.source_channels()) +
                                            " channels, tensor has " +
                                            std::to_string(tensor.channels()));
  RawDescriptor out;
  out.image_id = std::move(image_id);
  out.detector_count = static_cast<std::uint32_t>(detectors.size());
  out.channel_count = tensor.channels();
  out.values.reserve(detectors.size() * tensor.channels());
  for (auto channel : detectors.selected()) {
    const auto block = aggregate_region(tensor, compute_weights(tensor, channel, alpha, beta));
    out.values.insert(out.values.end(), block.begin(), block.end());
  }
  return out;
}

/// Plain-text PGM (P2, maxval 255), min-max scaled; a constant map renders black.
inline std::string to_pgm(const WeightMap& map) {
  std::ostringstream os;
  os << "P2\n" << map.width << ' ' << map.height << "\n255\n";
  double lo = 0.0, hi = 0.0;
  if (!map.weights.empty()) {
    const auto [mn, mx] = std::minmax_element(map.weights.begin(), map.weights.end());
    lo = *mn;
    hi = *mx;
  }
  const double range = hi - lo;
  for (std::uint32_t y = 0; y < map.height; ++y) {
    for (std::uint32_t x = 0; x < map.width; ++x) {
      const double w = map.weights[std::size_t(y) * map.width + x];
      const int level = range > 0.0 ? static_cast<int>(std::lround(255.0 * (w - lo) / range)) : 0;
      os << (x == 0 ? "" : " ") << level;
    }
    os << '\n';
  }
  return os.str();
}

inline void write_pgm(const std::filesystem::path& path, const WeightMap& map) {
  const auto text = to_pgm(map);
  detail::write_file(path, std::span<const char>(text.data(), text.size()));
}

}  // namespace pwa
