#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "aefuse/errors.hpp"
#include "aefuse/image.hpp"

namespace aefuse {

namespace detail {

inline void require_same_shape(const ImageGray& x, const ImageGray& y, const char* what) {
  if (!x.same_shape(y)) throw DimensionError(std::string(what) + ": image dimensions differ");
}

inline int gray_level(double v) { return static_cast<int>(quantize8(v)); }

inline std::array<double, 256> histogram256(const ImageGray& img) {
  std::array<double, 256> h{};
  for (double v : img.pixels()) h[gray_level(v)] += 1.0;
  return h;
}

template <class Range>
double entropy_of_counts(const Range& counts, double total) {
  double e = 0.0;
  for (double c : counts) {
    if (c <= 0.0) continue;
    const double p = c / total;
    e -= p * std::log2(p);
  }
  return e;
}

}  // namespace detail

/// Shannon entropy in bits of the 256-level histogram.
inline double entropy(const ImageGray& img) {
  return detail::entropy_of_counts(detail::histogram256(img), static_cast<double>(img.size()));
}

/// Average gradient: mean over the (W-1)x(H-1) grid of 2x2 cells of
/// sqrt((dx^2 + dy^2) / 2), where dx and dy average the cell's two forward
/// differences along each axis. Centering on the cell keeps the value
/// unchanged under flips.
inline double avg_gradient(const ImageGray& img) {
  if (img.width() < 2 || img.height() < 2) throw DimensionError("avg_gradient needs at least 2x2");
  double sum = 0.0;
  for (int y = 0; y + 1 < img.height(); ++y)
    for (int x = 0; x + 1 < img.width(); ++x) {
      const double dx = 0.5 * (img(x + 1, y) - img(x, y) + img(x + 1, y + 1) - img(x, y + 1));
      const double dy = 0.5 * (img(x, y + 1) - img(x, y) + img(x + 1, y + 1) - img(x + 1, y));
      sum += std::sqrt((dx * dx + dy * dy) / 2.0);
    }
  return sum / (static_cast<double>(img.width() - 1) * (img.height() - 1));
}

/// Brenner focus measure: sum of squared two-pixel horizontal differences
/// divided by the pixel count.
inline double brenner(const ImageGray& img) {
  if (img.width() < 3) throw DimensionError("brenner needs width >= 3");
  double sum = 0.0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x + 2 < img.width(); ++x) {
      const double d = img(x + 2, y) - img(x, y);
      sum += d * d;
    }
  return sum / static_cast<double>(img.size());
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

// Gaussian-window local moments shared by the SSIM metric and the SSIM loss.
struct SsimMoments {
  Plane mu_x, mu_y, xx, yy, xy;  // local E[x], E[y], E[x^2], E[y^2], E[xy]

  SsimMoments(const Plane& x, const Plane& y, const Plane& window) {
    Plane x2 = x, y2 = y, xy_raw = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      x2.data[i] = x.data[i] * x.data[i];
      y2.data[i] = y.data[i] * y.data[i];
      xy_raw.data[i] = x.data[i] * y.data[i];
    }
    mu_x = filter2_same(x, window);
    mu_y = filter2_same(y, window);
    xx = filter2_same(x2, window);
    yy = filter2_same(y2, window);
    xy = filter2_same(xy_raw, window);
  }
};

inline Plane ssim_map(const Plane& x, const Plane& y, const SsimParams& p = {}) {
  if (!x.same_shape(y)) throw DimensionError("ssim: image dimensions differ");
  if (std::min(x.width, x.height) < p.window) throw DimensionError("ssim: image smaller than window");
  const SsimMoments m(x, y, gaussian_kernel(p.window, p.sigma));
  Plane out(x.width, x.height);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mx = m.mu_x.data[i], my = m.mu_y.data[i];
    const double vx = m.xx.data[i] - mx * mx;
    const double vy = m.yy.data[i] - my * my;
    const double cxy = m.xy.data[i] - mx * my;
    out.data[i] = ((2 * mx * my + p.c1) * (2 * cxy + p.c2)) /
                  ((mx * mx + my * my + p.c1) * (vx + vy + p.c2));
  }
  return out;
}

inline double ssim(const ImageGray& x, const ImageGray& y, const SsimParams& p = {}) {
  detail::require_same_shape(x, y, "ssim");
  const Plane map = ssim_map(x.plane(), y.plane(), p);
  double sum = 0.0;
  for (double v : map.data) sum += v;
  return std::clamp(sum / static_cast<double>(map.size()), -1.0, 1.0);
}

inline constexpr double kPsnrCap = 100.0;

/// PSNR in dB on 8-bit scaled intensities; zero error maps to the 100 dB cap.
inline double psnr(const ImageGray& x, const ImageGray& y) {
  detail::require_same_shape(x, y, "psnr");
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = 255.0 * (x.pixels()[i] - y.pixels()[i]);
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(x.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

inline double mutual_information(const ImageGray& x, const ImageGray& y) {
  detail::require_same_shape(x, y, "mutual_information");
  std::vector<double> joint(256 * 256, 0.0);
  std::array<double, 256> hx{}, hy{};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const int gx = detail::gray_level(x.pixels()[i]);
    const int gy = detail::gray_level(y.pixels()[i]);
    joint[static_cast<std::size_t>(gx) * 256 + gy] += 1.0;
    hx[gx] += 1.0;
    hy[gy] += 1.0;
  }
  const double n = static_cast<double>(x.size());
  const double mi = detail::entropy_of_counts(hx, n) + detail::entropy_of_counts(hy, n) -
                    detail::entropy_of_counts(joint, n);
  return std::max(0.0, mi);
}

// ---------------------------------------------------------------------------
// Pixel-domain visual information fidelity

struct ViffParams {
  int scales = 4;
  double noise_var = 2.0;  // on 0..255 data
  int min_dim = 32;
};

inline double viff(const ImageGray& ref, const ImageGray& fused, const ViffParams& p = {}) {
  detail::require_same_shape(ref, fused, "viff");
  if (std::min(ref.width(), ref.height()) < p.min_dim)
    throw DimensionError("viff: image too small for the scale pyramid");

  constexpr double eps = 1e-10;
  Plane r = ref.plane(), d = fused.plane();
  for (double& v : r.data) v *= 255.0;
  for (double& v : d.data) v *= 255.0;

  const Plane smooth = gaussian_kernel(5, 1.0);
  const Plane local = box_kernel(3);
  double num = 0.0, den = 0.0;
  for (int s = 0; s < p.scales; ++s) {
    if (s > 0) {
      const Plane rs = filter2_same(r, smooth), ds = filter2_same(d, smooth);
      const int w = (rs.width + 1) / 2, h = (rs.height + 1) / 2;
      Plane rn(w, h), dn(w, h);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          rn(x, y) = rs(2 * x, 2 * y);
          dn(x, y) = ds(2 * x, 2 * y);
        }
      r = std::move(rn);
      d = std::move(dn);
    }
    const SsimMoments m(r, d, local);
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double mr = m.mu_x.data[i], md = m.mu_y.data[i];
      double var_r = std::max(0.0, m.xx.data[i] - mr * mr);
      const double var_d = std::max(0.0, m.yy.data[i] - md * md);
      const double cov = m.xy.data[i] - mr * md;
      double g = cov / (var_r + eps);
      double sv = var_d - g * cov;
      if (var_r < eps) {
        g = 0.0;
        sv = var_d;
        var_r = 0.0;
      }
      if (var_d < eps) {
        g = 0.0;
        sv = 0.0;
      }
      if (g < 0.0) {
        sv = var_d;
        g = 0.0;
      }
      sv = std::max(sv, eps);
      num += std::log10(1.0 + g * g * var_r / (sv + p.noise_var));
      den += std::log10(1.0 + var_r / p.noise_var);
    }
  }
  // A featureless reference carries no information to lose.
  if (den <= 0.0) return 1.0;
  return num / den;
}

// ---------------------------------------------------------------------------
// Combined score

struct QualityScores {
  double en = 0, ag = 0;
  double ssim_a = 0, ssim_b = 0;
  double psnr_a = 0, psnr_b = 0;
  double mi_a = 0, mi_b = 0;
  double viff = 0;
  double niqe = 0;  // lower is better; 0 when no model was supplied
  double brenner = 0;
  double combined = 0;

  friend bool operator==(const QualityScores&, const QualityScores&) = default;
};

// Column order used by combined_score.
enum class Metric { en, ag, ssim, viff, inv_niqe, psnr, mi, brenner };
inline constexpr std::size_t kMetricCount = 8;

struct MetricWeights {
  std::array<double, kMetricCount> w{1, 1, 1, 1, 1, 1, 1, 1};

  double& operator[](Metric m) { return w[static_cast<std::size_t>(m)]; }
  double operator[](Metric m) const { return w[static_cast<std::size_t>(m)]; }
};

// Beneficial-direction value of every metric column for one candidate.
inline std::array<double, kMetricCount> metric_columns(const QualityScores& s) {
  return {s.en,
          s.ag,
          0.5 * (s.ssim_a + s.ssim_b),
          s.viff,
          s.niqe > 0.0 ? 1.0 / s.niqe : 0.0,
          0.5 * (s.psnr_a + s.psnr_b),
          s.mi_a + s.mi_b,
          s.brenner};
}

/// Weighted mean of per-column min-max normalized metrics across the set.
/// A column that is constant across candidates contributes 0.5 to all.
inline std::vector<double> combined_score(std::span<const QualityScores> candidates,
                                          const MetricWeights& weights = {}) {
  if (candidates.empty()) throw EmptyInputError("combined_score: no candidates");
  const std::size_t n = candidates.size();
  std::vector<std::array<double, kMetricCount>> cols(n);
  for (std::size_t i = 0; i < n; ++i) {
    cols[i] = metric_columns(candidates[i]);
    for (double v : cols[i])
      if (!std::isfinite(v)) throw RangeError("combined_score: non-finite metric");
  }
  double wsum = 0.0;
  for (double w : weights.w) {
    if (w < 0.0 || !std::isfinite(w)) throw RangeError("combined_score: weights must be finite and >= 0");
    wsum += w;
  }
  if (wsum <= 0.0) throw RangeError("combined_score: weights sum to zero");

  std::vector<double> out(n, 0.0);
  for (std::size_t k = 0; k < kMetricCount; ++k) {
    double lo = cols[0][k], hi = cols[0][k];
    for (std::size_t i = 1; i < n; ++i) {
      lo = std::min(lo, cols[i][k]);
      hi = std::max(hi, cols[i][k]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double norm = hi > lo ? (cols[i][k] - lo) / (hi - lo) : 0.5;
      out[i] += weights.w[k] * norm;
    }
  }
  for (double& v : out) v /= wsum;
  return out;
}

}  // namespace aefuse
