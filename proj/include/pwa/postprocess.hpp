#pragma once

// l2-normalization, PCA compression and whitening of raw PWA descriptors.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pwa/aggregation.hpp"
#include "pwa/detail/binary_io.hpp"
#include "pwa/tensor.hpp"

namespace pwa {

inline constexpr double kDefaultWhiteningEpsilon = 1e-10;
inline constexpr double kOrthonormalTolerance = 1e-6;

/// Mean, projection rows (principal directions) and per-direction standard
/// deviations. Singular values are stored in the population convention:
/// sigma_i^2 is the variance of the training data along row i (divide by D),
/// so whitened training components have unit variance.
class WhiteningModel {
 public:
  WhiteningModel(Eigen::VectorXd mean, Eigen::MatrixXd projection, Eigen::VectorXd singular_values)
      : mean_(std::move(mean)), projection_(std::move(projection)), sigma_(std::move(singular_values)) {
    if (projection_.rows() == 0 || projection_.cols() == 0)
      throw Error(ErrorKind::InvalidShape, "whitening model must have M >= 1 and input dim >= 1");
    if (mean_.size() != projection_.cols() || sigma_.size() != projection_.rows())
      throw Error(ErrorKind::DimMismatch, "whitening model dims are inconsistent");
    if (projection_.rows() > projection_.cols())
      throw Error(ErrorKind::InvalidShape, "output dim exceeds input dim");
    if (!mean_.allFinite() || !projection_.allFinite() || !sigma_.allFinite())
      throw Error(ErrorKind::NonFinite, "whitening model has non-finite entries");
    for (Eigen::Index i = 0; i < sigma_.size(); ++i) {
      if (!(sigma_[i] > 0.0)) throw Error(ErrorKind::InvalidShape, "singular values must be > 0");
      if (i > 0 && sigma_[i] > sigma_[i - 1])
        throw Error(ErrorKind::InvalidShape, "singular values must be non-increasing");
    }
    const Eigen::MatrixXd gram = projection_ * projection_.transpose();
    const double err = (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
    if (err > kOrthonormalTolerance)
      throw Error(ErrorKind::InvalidShape, "projection rows are not orthonormal (max error " +
                                               std::to_string(err) + ")");
  }

  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(projection_.cols()); }
  std::size_t output_dim() const noexcept { return static_cast<std::size_t>(projection_.rows()); }
  const Eigen::VectorXd& mean() const noexcept { return mean_; }
  const Eigen::MatrixXd& projection() const noexcept { return projection_; }
  const Eigen::VectorXd& singular_values() const noexcept { return sigma_; }

  /// diag(sigma)^-1 * V * (x - mean) for an already l2-normalized x.
  Eigen::VectorXd whiten(const Eigen::VectorXd& normalized) const {
    return (projection_ * (normalized - mean_)).cwiseQuotient(sigma_);
  }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd projection_;
  Eigen::VectorXd sigma_;
};

namespace detail {

inline Eigen::VectorXd l2_normalized(std::span<const double> raw) {
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(raw.data(), static_cast<Eigen::Index>(raw.size()));
  const double norm = x.norm();
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw Error(ErrorKind::Degenerate, "cannot l2-normalize a zero or non-finite descriptor");
  return x / norm;
}

}  // namespace detail

/// Fits PCA-whitening on l2-normalized, mean-centred training descriptors.
/// Directions with sigma <= epsilon * sigma_1 are dropped, so the returned
/// model may have fewer than `m` rows.
inline WhiteningModel fit_whitening(std::span<const RawDescriptor> training, std::size_t m,
                                    double epsilon = kDefaultWhiteningEpsilon) {
  if (training.size() < 2)
    throw Error(ErrorKind::InvalidArgument, "whitening needs at least 2 training descriptors");
  const std::size_t dim = training.front().values.size();
  if (dim == 0) throw Error(ErrorKind::InvalidShape, "training descriptors are empty");
  for (const auto& t : training)
    if (t.values.size() != dim)
      throw Error(ErrorKind::DimMismatch, "training descriptors differ in length");
  const std::size_t max_m = std::min(dim, training.size() - 1);
  if (m < 1 || m > max_m)
    throw Error(ErrorKind::InvalidArgument, "target dim " + std::to_string(m) + " infeasible (max " +
                                                std::to_string(max_m) + " for " +
                                                std::to_string(training.size()) + " x " +
                                                std::to_string(dim) + " training set)");
  if (!(epsilon >= 0.0 && epsilon < 1.0))
    throw Error(ErrorKind::InvalidArgument, "epsilon must be in [0, 1)");

  const auto rows = static_cast<Eigen::Index>(training.size());
  const auto cols = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd x(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) x.row(i) = detail::l2_normalized(training[i].values).transpose();

  const Eigen::VectorXd mean = x.colwise().mean().transpose();
  x.rowwise() -= mean.transpose();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
  // Unit-norm inputs: any real spread is many orders above rounding noise.
  if (!(s.size() > 0 && s[0] * scale > 1e-12))
    throw Error(ErrorKind::Degenerate, "training descriptors have zero spread (all identical)");

  Eigen::Index kept = 0;
  while (kept < static_cast<Eigen::Index>(m) && kept < s.size() && s[kept] > epsilon * s[0]) ++kept;

  Eigen::MatrixXd projection = svd.matrixV().leftCols(kept).transpose();
  for (Eigen::Index r = 0; r < kept; ++r) {
    // Canonical sign: the largest-magnitude entry (first on ties) is positive.
    Eigen::Index arg = 0;
    projection.row(r).cwiseAbs().maxCoeff(&arg);
    if (projection(r, arg) < 0.0) projection.row(r) *= -1.0;
  }
  Eigen::VectorXd sigma = s.head(kept) * scale;
  return WhiteningModel(mean, std::move(projection), std::move(sigma));
}

struct PostprocessOptions {
  bool final_l2 = true;
};

/// Normalize, centre, project, whiten, and (by default) re-normalize so that
/// dot products between outputs are cosines.
inline DescriptorRecord apply_postprocess(const RawDescriptor& raw, const WhiteningModel& model,
                                          PostprocessOptions options = {}) {
  if (raw.values.size() != model.input_dim())
    throw Error(ErrorKind::DimMismatch, "descriptor '" + raw.image_id + "' has length " +
                                            std::to_string(raw.values.size()) + ", model expects " +
                                            std::to_string(model.input_dim()));
  Eigen::VectorXd y = model.whiten(detail::l2_normalized(raw.values));
  if (options.final_l2) {
    const double norm = y.norm();
    if (!(norm > 0.0))
      throw Error(ErrorKind::Degenerate, "descriptor '" + raw.image_id + "' whitens to zero");
    y /= norm;
  }
  DescriptorRecord out;
  out.image_id = raw.image_id;
  out.values.resize(static_cast<std::size_t>(y.size()));
  for (Eigen::Index i = 0; i < y.size(); ++i) out.values[static_cast<std::size_t>(i)] = static_cast<float>(y[i]);
  out.normalized = is_unit(out.values);
  return out;
}

// PWAW: "PWAW" | version=1 | input_dim | M | mean (f64) | projection (M x input_dim, row-major f64) | sigma (f64)
inline constexpr detail::Magic kWhiteningMagic{'P', 'W', 'A', 'W'};
inline constexpr std::uint32_t kWhiteningVersion = 1;

inline std::vector<char> encode_whitening(const WhiteningModel& model) {
  detail::ByteWriter w;
  w.magic(kWhiteningMagic);
  w.u32(kWhiteningVersion);
  w.u32(static_cast<std::uint32_t>(model.input_dim()));
  w.u32(static_cast<std::uint32_t>(model.output_dim()));
  for (Eigen::Index i = 0; i < model.mean().size(); ++i) w.f64(model.mean()[i]);
  for (Eigen::Index r = 0; r < model.projection().rows(); ++r)
    for (Eigen::Index c = 0; c < model.projection().cols(); ++c) w.f64(model.projection()(r, c));
  for (Eigen::Index i = 0; i < model.singular_values().size(); ++i) w.f64(model.singular_values()[i]);
  return w.bytes();
}

inline WhiteningModel decode_whitening(std::span<const char> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kWhiteningMagic);
  r.expect_version(kWhiteningVersion);
  const auto in = r.u32();
  const auto m = r.u32();
  if (in == 0 || m == 0) throw Error(ErrorKind::InvalidShape, "whitening dims must be >= 1");
  r.require((std::uint64_t(in) + std::uint64_t(m) * in + m) * 8, "whitening payload");
  Eigen::VectorXd mean(in);
  for (Eigen::Index i = 0; i < mean.size(); ++i) mean[i] = r.f64();
  Eigen::MatrixXd projection(m, in);
  for (Eigen::Index row = 0; row < projection.rows(); ++row)
    for (Eigen::Index c = 0; c < projection.cols(); ++c) projection(row, c) = r.f64();
  Eigen::VectorXd sigma(m);
  for (Eigen::Index i = 0; i < sigma.size(); ++i) sigma[i] = r.f64();
  r.expect_end();
  return WhiteningModel(std::move(mean), std::move(projection), std::move(sigma));
}

inline void save_whitening(const std::filesystem::path& path, const WhiteningModel& model) {
  detail::write_file(path, encode_whitening(model));
}

inline WhiteningModel load_whitening(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_whitening(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.message());
  }
}

}  // namespace pwa
