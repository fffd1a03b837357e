#pragma once

// Natural image quality evaluator: a multivariate Gaussian fitted to
// natural-scene statistics of pristine patches, compared against the same
// statistics of a test image.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <limits>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "aefuse/errors.hpp"
#include "aefuse/image.hpp"

namespace aefuse {

inline constexpr int kNiqeFeaturesPerScale = 18;
inline constexpr int kNiqeFeatureDim = 2 * kNiqeFeaturesPerScale;
inline constexpr int kNiqePatch = 96;
inline constexpr std::size_t kNiqeMinImages = 20;

struct NiqeModel {
  std::vector<double> mu_ref;   // feature_dim
  std::vector<double> cov_ref;  // feature_dim x feature_dim, row-major
  int patch_size = kNiqePatch;
  int feature_dim = kNiqeFeatureDim;
};

namespace niqe_detail {

struct AggdFit {
  double shape = 0, left_scale = 0, right_scale = 0;
};

// Ratio-matching table for the generalized Gaussian shape parameter.
struct ShapeTable {
  std::vector<double> shape, ratio;
  ShapeTable() {
    for (int i = 0; i <= 9800; ++i) {
      const double g = 0.2 + 0.001 * i;
      shape.push_back(g);
      ratio.push_back(std::exp(2 * std::lgamma(2 / g) - std::lgamma(1 / g) - std::lgamma(3 / g)));
    }
  }
};

inline const ShapeTable& shape_table() {
  static const ShapeTable t;
  return t;
}

// Moment-matching AGGD estimate.
inline AggdFit fit_aggd(std::span<const double> v) {
  double lsum = 0, rsum = 0, abs_sum = 0, sq_sum = 0;
  std::size_t lcount = 0, rcount = 0;
  for (double x : v) {
    if (x < 0) {
      lsum += x * x;
      ++lcount;
    } else if (x > 0) {
      rsum += x * x;
      ++rcount;
    }
    abs_sum += std::abs(x);
    sq_sum += x * x;
  }
  const double n = static_cast<double>(v.size());
  const double lstd = lcount ? std::sqrt(lsum / lcount) : 0.0;
  const double rstd = rcount ? std::sqrt(rsum / rcount) : 0.0;
  const double gamma_hat = (lstd > 0 && rstd > 0) ? lstd / rstd : 1.0;
  const double mean_abs = abs_sum / n, mean_sq = sq_sum / n;
  const double r_hat = mean_sq > 0 ? mean_abs * mean_abs / mean_sq : 0.0;
  const double r_norm = r_hat * (std::pow(gamma_hat, 3) + 1) * (gamma_hat + 1) /
                        std::pow(gamma_hat * gamma_hat + 1, 2);
  const auto& t = shape_table();
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < t.ratio.size(); ++i) {
    const double d = (t.ratio[i] - r_norm) * (t.ratio[i] - r_norm);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  AggdFit f;
  f.shape = t.shape[best];
  const double k = std::sqrt(std::exp(std::lgamma(1 / f.shape) - std::lgamma(3 / f.shape)));
  f.left_scale = lstd * k;
  f.right_scale = rstd * k;
  return f;
}

// Mean-subtracted contrast-normalized field of a [0,1] image.
inline Plane mscn(const Plane& img) {
  const Plane window = gaussian_kernel(7, 7.0 / 6.0);
  const Plane mu = filter2_same(img, window);
  Plane sq = img;
  for (double& v : sq.data) v *= v;
  const Plane mu2 = filter2_same(sq, window);
  Plane out(img.width, img.height);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double sigma = std::sqrt(std::abs(mu2.data[i] - mu.data[i] * mu.data[i]));
    out.data[i] = (img.data[i] - mu.data[i]) / (sigma + 1.0 / 255.0);
  }
  return out;
}

// Local standard deviation averaged over a patch: the sharpness measure.
inline Plane local_sigma(const Plane& img) {
  const Plane window = gaussian_kernel(7, 7.0 / 6.0);
  const Plane mu = filter2_same(img, window);
  Plane sq = img;
  for (double& v : sq.data) v *= v;
  const Plane mu2 = filter2_same(sq, window);
  Plane out(img.width, img.height);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = std::sqrt(std::abs(mu2.data[i] - mu.data[i] * mu.data[i]));
  return out;
}

inline void patch_features(const Plane& field, double* out) {
  const int w = field.width, h = field.height;
  const AggdFit base = fit_aggd(field.data);
  out[0] = base.shape;
  out[1] = 0.5 * (base.left_scale + base.right_scale);
  // horizontal, vertical, main diagonal, anti-diagonal neighbours (circular)
  constexpr std::array<std::array<int, 2>, 4> shifts{{{1, 0}, {0, 1}, {1, 1}, {-1, 1}}};
  std::vector<double> prod(field.size());
  for (std::size_t s = 0; s < shifts.size(); ++s) {
    const auto [dx, dy] = shifts[s];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        prod[static_cast<std::size_t>(y) * w + x] =
            field(x, y) * field(((x - dx) % w + w) % w, ((y - dy) % h + h) % h);
    const AggdFit f = fit_aggd(prod);
    const double mean = (f.right_scale - f.left_scale) *
                        std::exp(std::lgamma(2 / f.shape) - std::lgamma(1 / f.shape));
    double* o = out + 2 + 4 * s;
    o[0] = f.shape;
    o[1] = mean;
    o[2] = f.left_scale * f.left_scale;
    o[3] = f.right_scale * f.right_scale;
  }
}

struct PatchFeatures {
  std::vector<std::array<double, kNiqeFeatureDim>> features;
  std::vector<double> sharpness;
};

inline PatchFeatures image_features(const ImageGray& img, int patch) {
  if (img.width() < patch || img.height() < patch)
    throw DimensionError("niqe: image smaller than one patch");
  const int half_w = std::max(1, img.width() / 2), half_h = std::max(1, img.height() / 2);
  const Plane field1 = mscn(img.plane());
  const Plane field2 = mscn(resize_bilinear(img, half_w, half_h).plane());
  const Plane sigma = local_sigma(img.plane());
  const int hp = patch / 2;

  PatchFeatures pf;
  for (int y = 0; y + patch <= img.height(); y += patch) {
    for (int x = 0; x + patch <= img.width(); x += patch) {
      std::array<double, kNiqeFeatureDim> f{};
      patch_features(crop(field1, x, y, patch, patch), f.data());
      patch_features(crop(field2, x / 2, y / 2, hp, hp), f.data() + kNiqeFeaturesPerScale);
      pf.features.push_back(f);
      double s = 0.0;
      for (int yy = y; yy < y + patch; ++yy)
        for (int xx = x; xx < x + patch; ++xx) s += sigma(xx, yy);
      pf.sharpness.push_back(s / (static_cast<double>(patch) * patch));
    }
  }
  return pf;
}

inline void mean_cov(const std::vector<std::array<double, kNiqeFeatureDim>>& rows,
                     std::vector<double>& mu, std::vector<double>& cov) {
  constexpr int d = kNiqeFeatureDim;
  const std::size_t n = rows.size();
  mu.assign(d, 0.0);
  cov.assign(static_cast<std::size_t>(d) * d, 0.0);
  for (const auto& r : rows)
    for (int i = 0; i < d; ++i) mu[i] += r[i];
  for (double& m : mu) m /= static_cast<double>(n);
  if (n < 2) return;
  for (const auto& r : rows)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) cov[static_cast<std::size_t>(i) * d + j] += (r[i] - mu[i]) * (r[j] - mu[j]);
  for (double& c : cov) c /= static_cast<double>(n - 1);
}

}  // namespace niqe_detail

/// Mahalanobis-style distance between two Gaussians using the pooled
/// covariance; the pseudo-inverse is used so singular pools stay finite.
inline double niqe_distance(std::span<const double> mu1, std::span<const double> cov1,
                            std::span<const double> mu2, std::span<const double> cov2) {
  const auto d = static_cast<Eigen::Index>(mu1.size());
  if (mu2.size() != mu1.size() || cov1.size() != mu1.size() * mu1.size() || cov2.size() != cov1.size())
    throw DimensionError("niqe_distance: inconsistent feature dimensions");
  Eigen::MatrixXd pooled(d, d);
  Eigen::VectorXd diff(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    diff(i) = mu1[i] - mu2[i];
    for (Eigen::Index j = 0; j < d; ++j) {
      const std::size_t k = static_cast<std::size_t>(i * d + j);
      pooled(i, j) = 0.5 * (cov1[k] + cov2[k]);
    }
  }
  pooled = 0.5 * (pooled + pooled.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(pooled);
  const Eigen::VectorXd& vals = eig.eigenvalues();
  const double tol = std::max(vals.cwiseAbs().maxCoeff(), 1e-300) * d * 1e-12;
  const Eigen::VectorXd proj = eig.eigenvectors().transpose() * diff;
  double q = 0.0;
  for (Eigen::Index i = 0; i < d; ++i)
    if (std::abs(vals(i)) > tol) q += proj(i) * proj(i) / vals(i);
  return std::sqrt(std::max(0.0, q));
}

inline NiqeModel fit_niqe_model(std::span<const ImageGray> pristine) {
  if (pristine.size() < kNiqeMinImages)
    throw InsufficientDataError("niqe: need at least 20 pristine images");
  std::vector<std::array<double, kNiqeFeatureDim>> kept;
  for (const auto& img : pristine) {
    if (img.width() < kNiqePatch || img.height() < kNiqePatch)
      throw InsufficientDataError("niqe: pristine image smaller than 96x96");
    auto pf = niqe_detail::image_features(img, kNiqePatch);
    // keep the sharpest 75% of patches (threshold at the 25th percentile)
    std::vector<double> sorted = pf.sharpness;
    std::sort(sorted.begin(), sorted.end());
    const double threshold = sorted[sorted.size() / 4];
    for (std::size_t i = 0; i < pf.features.size(); ++i)
      if (pf.sharpness[i] >= threshold) kept.push_back(pf.features[i]);
  }
  if (kept.size() < 2) throw InsufficientDataError("niqe: too few patches to fit a model");
  NiqeModel m;
  niqe_detail::mean_cov(kept, m.mu_ref, m.cov_ref);
  return m;
}

inline double niqe_score(const ImageGray& img, const NiqeModel& model) {
  if (model.mu_ref.size() != static_cast<std::size_t>(model.feature_dim) ||
      model.feature_dim != kNiqeFeatureDim)
    throw FormatError("niqe: model is not fitted");
  const auto pf = niqe_detail::image_features(img, model.patch_size);
  std::vector<double> mu, cov;
  niqe_detail::mean_cov(pf.features, mu, cov);
  return niqe_distance(model.mu_ref, model.cov_ref, mu, cov);
}

// ---------------------------------------------------------------------------
// Model file: "NIQE", u32 feature_dim, mu then row-major covariance as f64,
// all little-endian.

namespace niqe_detail {

template <class T>
void put_le(std::string& out, T v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <class T>
T get_le(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw TruncationError("niqe model file truncated");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  T v;
  std::memcpy(&v, &bits, sizeof(T));
  return v;
}

}  // namespace niqe_detail

inline std::string encode_niqe_model(const NiqeModel& m) {
  std::string out = "NIQE";
  niqe_detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.feature_dim));
  for (double v : m.mu_ref) niqe_detail::put_le(out, v);
  for (double v : m.cov_ref) niqe_detail::put_le(out, v);
  return out;
}

inline NiqeModel decode_niqe_model(std::string_view in) {
  if (in.size() < 4 || in.substr(0, 4) != "NIQE") throw FormatError("not a NIQE model file");
  std::size_t pos = 4;
  NiqeModel m;
  const auto dim = niqe_detail::get_le<std::uint32_t>(in, pos);
  if (dim != static_cast<std::uint32_t>(kNiqeFeatureDim))
    throw FormatError("niqe model feature dimension " + std::to_string(dim) + " unsupported");
  m.feature_dim = static_cast<int>(dim);
  m.mu_ref.resize(dim);
  m.cov_ref.resize(static_cast<std::size_t>(dim) * dim);
  for (double& v : m.mu_ref) v = niqe_detail::get_le<double>(in, pos);
  for (double& v : m.cov_ref) v = niqe_detail::get_le<double>(in, pos);
  if (pos != in.size()) throw FormatError("trailing bytes in niqe model file");
  return m;
}

inline void save_niqe_model(const NiqeModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  const std::string bytes = encode_niqe_model(m);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline NiqeModel load_niqe_model(const std::filesystem::path& path) {
  return decode_niqe_model(detail::read_file(path));
}

}  // namespace aefuse
