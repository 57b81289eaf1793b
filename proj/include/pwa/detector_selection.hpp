#pragma once

// Unsupervised part-detector fitting: sum-pooled channel responses over a
// database, their per-channel population variances, and top-N selection.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <ranges>
#include <span>
#include <vector>

#include "pwa/detail/binary_io.hpp"
#include "pwa/tensor.hpp"

namespace pwa {

/// g[c] = sum over all spatial positions of channel c, accumulated in double.
inline std::vector<double> sum_pool(const FeatureMapTensor& tensor) {
  std::vector<double> g(tensor.channels(), 0.0);
  for (std::uint32_t c = 0; c < tensor.channels(); ++c) {
    double acc = 0.0;
    for (float v : tensor.channel(c)) acc += v;
    g[c] = acc;
  }
  return g;
}

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> variance;  // population variance (divide by D)
  std::uint64_t sample_count = 0;

  std::size_t channel_count() const noexcept { return mean.size(); }
};

/// Bounded-memory accumulator for per-channel mean and variance of the
/// sum-pooled vectors. Uses Welford updates and Chan's pairwise merge, so
/// identical inputs give exactly zero variance and partial accumulators from
/// parallel readers combine without revisiting data.
class ChannelStatsAccumulator {
 public:
  void add(const FeatureMapTensor& tensor) { add_pooled(sum_pool(tensor)); }

  void add_pooled(std::span<const double> g) {
    if (count_ == 0) {
      mean_.assign(g.size(), 0.0);
      m2_.assign(g.size(), 0.0);
    } else if (g.size() != mean_.size()) {
      throw Error(ErrorKind::DimMismatch, "tensor has " + std::to_string(g.size()) +
                                              " channels, earlier tensors had " +
                                              std::to_string(mean_.size()));
    }
    ++count_;
    const double n = static_cast<double>(count_);
    for (std::size_t c = 0; c < g.size(); ++c) {
      const double delta = g[c] - mean_[c];
      mean_[c] += delta / n;
      m2_[c] += delta * (g[c] - mean_[c]);
    }
  }

  void merge(const ChannelStatsAccumulator& other) {
    if (other.count_ == 0) return;
    if (count_ == 0) {
      *this = other;
      return;
    }
    if (other.mean_.size() != mean_.size())
      throw Error(ErrorKind::DimMismatch, "cannot merge stats with different channel counts");
    const double na = static_cast<double>(count_);
    const double nb = static_cast<double>(other.count_);
    const double n = na + nb;
    for (std::size_t c = 0; c < mean_.size(); ++c) {
      const double delta = other.mean_[c] - mean_[c];
      mean_[c] += delta * nb / n;
      m2_[c] += other.m2_[c] + delta * delta * na * nb / n;
    }
    count_ += other.count_;
  }

  std::uint64_t count() const noexcept { return count_; }

  ChannelStats finish() const {
    if (count_ < 2)
      throw Error(ErrorKind::InvalidArgument,
                  "channel statistics need at least 2 images, got " + std::to_string(count_));
    ChannelStats s;
    s.mean = mean_;
    s.sample_count = count_;
    s.variance.resize(m2_.size());
    for (std::size_t c = 0; c < m2_.size(); ++c)
      s.variance[c] = std::max(0.0, m2_[c] / static_cast<double>(count_));
    return s;
  }

 private:
  std::uint64_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

template <std::ranges::input_range R>
  requires std::same_as<std::remove_cvref_t<std::ranges::range_reference_t<R>>, FeatureMapTensor>
ChannelStats fit_channel_stats(R&& tensors) {
  ChannelStatsAccumulator acc;
  for (const FeatureMapTensor& t : tensors) acc.add(t);
  return acc.finish();
}

/// The fitted part detectors: channel indices ordered by descending variance.
class DetectorSet {
 public:
  DetectorSet(std::vector<std::uint32_t> selected, std::vector<double> variances,
              std::uint32_t source_channels)
      : selected_(std::move(selected)),
        variances_(std::move(variances)),
        source_channels_(source_channels) {
    if (selected_.empty() || selected_.size() > source_channels_)
      throw Error(ErrorKind::InvalidArgument, "detector count must be in [1, " +
                                                  std::to_string(source_channels_) + "]");
    if (variances_.size() != selected_.size())
      throw Error(ErrorKind::DimMismatch, "one variance per selected channel required");
    std::vector<bool> seen(source_channels_, false);
    for (std::size_t i = 0; i < selected_.size(); ++i) {
      const auto c = selected_[i];
      if (c >= source_channels_ || seen[c])
        throw Error(ErrorKind::InvalidArgument,
                    "channel index " + std::to_string(c) + " out of range or repeated");
      seen[c] = true;
      if (!std::isfinite(variances_[i]) || variances_[i] < 0.0)
        throw Error(ErrorKind::NonFinite, "variances must be finite and >= 0");
      if (i > 0 && variances_[i] > variances_[i - 1])
        throw Error(ErrorKind::InvalidArgument, "variances must be non-increasing");
    }
  }

  std::span<const std::uint32_t> selected() const noexcept { return selected_; }
  std::span<const double> variances() const noexcept { return variances_; }
  std::uint32_t source_channels() const noexcept { return source_channels_; }
  std::size_t size() const noexcept { return selected_.size(); }

  friend bool operator==(const DetectorSet&, const DetectorSet&) = default;

 private:
  std::vector<std::uint32_t> selected_;
  std::vector<double> variances_;
  std::uint32_t source_channels_;
};

/// Orders `channels` by descending variance (ties: ascending index).
inline DetectorSet make_detector_set(const ChannelStats& stats,
                                     std::vector<std::uint32_t> channels) {
  const auto& var = stats.variance;
  for (auto c : channels)
    if (c >= var.size())
      throw Error(ErrorKind::InvalidArgument, "channel " + std::to_string(c) + " out of range");
  std::sort(channels.begin(), channels.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (var[a] != var[b]) return var[a] > var[b];
    return a < b;
  });
  std::vector<double> v;
  v.reserve(channels.size());
  for (auto c : channels) v.push_back(var[c]);
  return DetectorSet(std::move(channels), std::move(v),
                     static_cast<std::uint32_t>(stats.channel_count()));
}

inline DetectorSet select_detectors(const ChannelStats& stats, std::size_t n) {
  const std::size_t channels = stats.channel_count();
  if (n < 1 || n > channels)
    throw Error(ErrorKind::InvalidArgument, "requested " + std::to_string(n) +
                                                " detectors from " + std::to_string(channels) +
                                                " channels");
  std::vector<std::uint32_t> all(channels);
  std::iota(all.begin(), all.end(), 0u);
  auto ordered = make_detector_set(stats, std::move(all));
  std::vector<std::uint32_t> top(ordered.selected().begin(), ordered.selected().begin() + n);
  std::vector<double> var(ordered.variances().begin(), ordered.variances().begin() + n);
  return DetectorSet(std::move(top), std::move(var), ordered.source_channels());
}

// PWAS: "PWAS" | version=1 | C | N | N x (index u32, variance f64)
inline constexpr detail::Magic kDetectorMagic{'P', 'W', 'A', 'S'};
inline constexpr std::uint32_t kDetectorVersion = 1;

inline std::vector<char> encode_detector_set(const DetectorSet& set) {
  detail::ByteWriter w;
  w.magic(kDetectorMagic);
  w.u32(kDetectorVersion);
  w.u32(set.source_channels());
  w.u32(static_cast<std::uint32_t>(set.size()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    w.u32(set.selected()[i]);
    w.f64(set.variances()[i]);
  }
  return w.bytes();
}

inline DetectorSet decode_detector_set(std::span<const char> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kDetectorMagic);
  r.expect_version(kDetectorVersion);
  const auto channels = r.u32();
  const auto n = r.u32();
  r.require(std::uint64_t(n) * 12, "detector entries");
  std::vector<std::uint32_t> selected(n);
  std::vector<double> variances(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    selected[i] = r.u32();
    variances[i] = r.f64();
  }
  r.expect_end();
  try {
    return DetectorSet(std::move(selected), std::move(variances), channels);
  } catch (const Error& e) {
    // A structurally valid file with inconsistent content is a format problem.
    throw Error(e.kind() == ErrorKind::InvalidArgument ? ErrorKind::InvalidShape : e.kind(),
                e.message());
  }
}

inline void save_detector_set(const std::filesystem::path& path, const DetectorSet& set) {
  detail::write_file(path, encode_detector_set(set));
}

inline DetectorSet load_detector_set(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_detector_set(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.message());
  }
}

}  // namespace pwa
