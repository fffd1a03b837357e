#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aefuse/errors.hpp"
#include "aefuse/image.hpp"
#include "aefuse/metrics.hpp"

namespace aefuse {

struct FusionCandidate {
  std::string algo_id;
  ImageGray fused;
  std::optional<QualityScores> scores;
};

// ---------------------------------------------------------------------------
// Burt-Adelson pyramid

namespace pyramid_detail {

inline const Plane& burt_kernel() {
  static const Plane k = [] {
    const std::array<double, 5> taps{1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
    return separable_kernel(taps);
  }();
  return k;
}

inline Plane pad_to_even(const Plane& p) {
  const int w = p.width + (p.width % 2), h = p.height + (p.height % 2);
  if (w == p.width && h == p.height) return p;
  Plane out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(x, y) = p(reflect_index(x, p.width), reflect_index(y, p.height));
  return out;
}

}  // namespace pyramid_detail

inline Plane pyramid_reduce(const Plane& p) {
  const Plane blurred = filter2_same(pyramid_detail::pad_to_even(p), pyramid_detail::burt_kernel());
  Plane out(blurred.width / 2, blurred.height / 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out(x, y) = blurred(2 * x, 2 * y);
  return out;
}

// Zero-insert and blur, normalized by the blurred insertion mask so constant
// planes expand to the same constant up to the border; crop to the requested size.
inline Plane pyramid_expand(const Plane& p, int out_w, int out_h) {
  Plane up(2 * p.width, 2 * p.height), mask(2 * p.width, 2 * p.height);
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) {
      up(2 * x, 2 * y) = p(x, y);
      mask(2 * x, 2 * y) = 1.0;
    }
  Plane blurred = filter2_same(up, pyramid_detail::burt_kernel());
  const Plane weight = filter2_same(mask, pyramid_detail::burt_kernel());
  for (std::size_t i = 0; i < blurred.size(); ++i) blurred.data[i] /= weight.data[i];
  if (blurred.width == out_w && blurred.height == out_h) return blurred;
  return crop(blurred, 0, 0, out_w, out_h);
}

struct LaplacianPyramid {
  std::vector<Plane> bands;  // finest first
  Plane base;
};

inline LaplacianPyramid laplacian_decompose(const Plane& img, int levels) {
  if (levels < 2) throw DimensionError("laplacian pyramid needs at least 2 levels");
  if (std::min(img.width, img.height) < (1 << levels))
    throw DimensionError("image too small for the requested pyramid depth");
  LaplacianPyramid pyr;
  Plane current = img;
  for (int l = 0; l + 1 < levels; ++l) {
    Plane next = pyramid_reduce(current);
    Plane band = pyramid_expand(next, current.width, current.height);
    for (std::size_t i = 0; i < band.size(); ++i) band.data[i] = current.data[i] - band.data[i];
    pyr.bands.push_back(std::move(band));
    current = std::move(next);
  }
  pyr.base = std::move(current);
  return pyr;
}

inline Plane laplacian_reconstruct(const LaplacianPyramid& pyr) {
  Plane current = pyr.base;
  for (auto it = pyr.bands.rbegin(); it != pyr.bands.rend(); ++it) {
    Plane up = pyramid_expand(current, it->width, it->height);
    for (std::size_t i = 0; i < up.size(); ++i) up.data[i] += it->data[i];
    current = std::move(up);
  }
  return current;
}

// ---------------------------------------------------------------------------
// Fusers

inline FusionCandidate fuse_average(const ImagePair& pair) {
  Plane out(pair.width(), pair.height());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = 0.5 * (pair.a.pixels()[i] + pair.b.pixels()[i]);
  return {"avg", ImageGray::clamped(std::move(out)), std::nullopt};
}

// Keep whichever source deviates more from mid-gray; ties keep a.
inline FusionCandidate fuse_absmax(const ImagePair& pair) {
  Plane out(pair.width(), pair.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double a = pair.a.pixels()[i], b = pair.b.pixels()[i];
    out.data[i] = std::abs(a - 0.5) >= std::abs(b - 0.5) ? a : b;
  }
  return {"absmax", ImageGray::clamped(std::move(out)), std::nullopt};
}

namespace fusion_detail {

inline Plane gradient_energy(const ImageGray& img) {
  Plane e(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const double dx = x + 1 < img.width() ? img(x + 1, y) - img(x, y) : 0.0;
      const double dy = y + 1 < img.height() ? img(x, y + 1) - img(x, y) : 0.0;
      e(x, y) = dx * dx + dy * dy;
    }
  return e;
}

}  // namespace fusion_detail

/// Per-pixel focus selection. Returns the binary decision map (1 = take a)
/// after majority smoothing.
inline Plane gradient_decision_map(const ImagePair& pair, int window = 7) {
  if (window < 1 || window % 2 == 0) throw DimensionError("gradsel window must be odd");
  const Plane ones(window, window, 1.0);
  const Plane ea = filter2_same(fusion_detail::gradient_energy(pair.a), ones);
  const Plane eb = filter2_same(fusion_detail::gradient_energy(pair.b), ones);
  Plane decision(pair.width(), pair.height());
  for (std::size_t i = 0; i < decision.size(); ++i) decision.data[i] = ea.data[i] >= eb.data[i] ? 1.0 : 0.0;
  const Plane votes = filter2_same(decision, box_kernel(window));
  for (std::size_t i = 0; i < decision.size(); ++i) decision.data[i] = votes.data[i] >= 0.5 ? 1.0 : 0.0;
  return decision;
}

inline FusionCandidate fuse_gradient_select(const ImagePair& pair, int window = 7) {
  const Plane decision = gradient_decision_map(pair, window);
  Plane out(pair.width(), pair.height());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = decision.data[i] > 0.5 ? pair.a.pixels()[i] : pair.b.pixels()[i];
  return {"gradsel", ImageGray::clamped(std::move(out)), std::nullopt};
}

inline FusionCandidate fuse_laplacian_pyramid(const ImagePair& pair, int levels = 4) {
  const LaplacianPyramid pa = laplacian_decompose(pair.a.plane(), levels);
  const LaplacianPyramid pb = laplacian_decompose(pair.b.plane(), levels);
  LaplacianPyramid fused;
  for (std::size_t l = 0; l < pa.bands.size(); ++l) {
    Plane band = pa.bands[l];
    for (std::size_t i = 0; i < band.size(); ++i)
      if (std::abs(pb.bands[l].data[i]) > std::abs(band.data[i])) band.data[i] = pb.bands[l].data[i];
    fused.bands.push_back(std::move(band));
  }
  fused.base = pa.base;
  for (std::size_t i = 0; i < fused.base.size(); ++i)
    fused.base.data[i] = 0.5 * (pa.base.data[i] + pb.base.data[i]);
  return {"lp", ImageGray::clamped(laplacian_reconstruct(fused)), std::nullopt};
}

/// Exposure fusion: well-exposedness (Gaussian around 0.5, sigma 0.2) times
/// |Laplacian| contrast, normalized per pixel.
inline FusionCandidate fuse_exposure_weighted(const ImagePair& pair) {
  constexpr double eps = 1e-12;
  static const Plane laplacian(3, 3, std::vector<double>{0, 1, 0, 1, -4, 1, 0, 1, 0});
  const Plane ca = filter2_same(pair.a.plane(), laplacian);
  const Plane cb = filter2_same(pair.b.plane(), laplacian);
  auto well = [](double v) { return std::exp(-(v - 0.5) * (v - 0.5) / (2 * 0.2 * 0.2)); };
  Plane out(pair.width(), pair.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double a = pair.a.pixels()[i], b = pair.b.pixels()[i];
    const double wa = std::abs(ca.data[i]) * well(a) + eps;
    const double wb = std::abs(cb.data[i]) * well(b) + eps;
    out.data[i] = (wa * a + wb * b) / (wa + wb);
  }
  return {"expw", ImageGray::clamped(std::move(out)), std::nullopt};
}

// ---------------------------------------------------------------------------
// Registry

using Fuser = std::function<FusionCandidate(const ImagePair&)>;

inline const std::map<std::string, Fuser>& fuser_registry() {
  static const std::map<std::string, Fuser> registry{
      {"avg", [](const ImagePair& p) { return fuse_average(p); }},
      {"absmax", [](const ImagePair& p) { return fuse_absmax(p); }},
      {"gradsel", [](const ImagePair& p) { return fuse_gradient_select(p); }},
      {"lp", [](const ImagePair& p) { return fuse_laplacian_pyramid(p); }},
      {"expw", [](const ImagePair& p) { return fuse_exposure_weighted(p); }},
  };
  return registry;
}

inline std::vector<std::string> bank_algorithms() { return {"avg", "absmax", "gradsel", "lp", "expw"}; }

inline bool is_fuser(const std::string& id) { return fuser_registry().count(id) != 0; }

inline FusionCandidate run_fuser(const std::string& id, const ImagePair& pair) {
  const auto& reg = fuser_registry();
  const auto it = reg.find(id);
  if (it == reg.end()) throw UnknownAlgorithmError("unknown fusion algorithm '" + id + "'");
  FusionCandidate c = it->second(pair);
  if (!c.fused.same_shape(pair.a)) throw DimensionError("fuser '" + id + "' changed image size");
  c.algo_id = id;
  return c;
}

inline std::vector<FusionCandidate> run_bank(const ImagePair& pair, const std::vector<std::string>& algos) {
  for (const auto& id : algos)
    if (!is_fuser(id)) throw UnknownAlgorithmError("unknown fusion algorithm '" + id + "'");
  std::vector<FusionCandidate> out;
  out.reserve(algos.size());
  for (const auto& id : algos) out.push_back(run_fuser(id, pair));
  return out;
}

}  // namespace aefuse
