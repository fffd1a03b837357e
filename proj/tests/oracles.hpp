#pragma once

// Straight-loop reference implementations used to cross-check the library.
// They share no code with it beyond the data containers.

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "aefuse/image.hpp"
#include "aefuse/random.hpp"
#include "aefuse/tensor.hpp"

namespace oracle {

using aefuse::ImageGray;
using aefuse::Tensor4;

inline double px(const ImageGray& img, int x, int y) {
  return img.pixels()[static_cast<std::size_t>(y) * img.width() + x];
}

inline int level(double v) { return static_cast<int>(std::floor(v * 255.0 + 0.5)); }

inline double entropy(const ImageGray& img) {
  std::map<int, double> counts;
  for (double v : img.pixels()) counts[level(v)] += 1;
  double e = 0;
  for (const auto& [k, c] : counts) {
    const double p = c / static_cast<double>(img.size());
    e -= p * std::log(p) / std::log(2.0);
  }
  return e;
}

inline double mutual_information(const ImageGray& a, const ImageGray& b) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> pa, pb;
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int la = level(a.pixels()[i]), lb = level(b.pixels()[i]);
    joint[{la, lb}] += 1 / n;
    pa[la] += 1 / n;
    pb[lb] += 1 / n;
  }
  double mi = 0;
  for (const auto& [k, p] : joint) mi += p * std::log2(p / (pa[k.first] * pb[k.second]));
  return mi;
}

inline double avg_gradient(const ImageGray& img) {
  double s = 0;
  int count = 0;
  for (int y = 0; y < img.height() - 1; ++y)
    for (int x = 0; x < img.width() - 1; ++x) {
      const double a = px(img, x, y), b = px(img, x + 1, y), c = px(img, x, y + 1), d = px(img, x + 1, y + 1);
      const double gx = ((b - a) + (d - c)) / 2;
      const double gy = ((c - a) + (d - b)) / 2;
      s += std::sqrt(0.5 * (gx * gx + gy * gy));
      ++count;
    }
  return s / count;
}

inline double brenner(const ImageGray& img) {
  double s = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 2; x < img.width(); ++x) s += std::pow(px(img, x, y) - px(img, x - 2, y), 2);
  return s / (img.width() * img.height());
}

// Mirror with the edge sample repeated: -1 -> 0, n -> n - 1.
inline int mirror(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

/// Mean SSIM with an 11x11 Gaussian (sigma 1.5) evaluated window by window.
inline double ssim(const ImageGray& a, const ImageGray& b) {
  const int r = 5;
  double wsum = 0;
  std::vector<double> wk;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      wk.push_back(std::exp(-(dx * dx + dy * dy) / (2 * 1.5 * 1.5)));
      wsum += wk.back();
    }
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      int k = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx, ++k) {
          const double w = wk[k] / wsum;
          const double va = px(a, mirror(x + dx, a.width()), mirror(y + dy, a.height()));
          const double vb = px(b, mirror(x + dx, a.width()), mirror(y + dy, a.height()));
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  return total / (a.width() * a.height());
}

/// Grouped cross-correlation, zero padding, one output element at a time.
template <class T>
Tensor4<T> conv2d(const Tensor4<T>& in, const Tensor4<T>& w, const Tensor4<T>& bias, int stride, int pad,
                  int groups) {
  const int cout = w.n(), cpg = in.c() / groups, opg = cout / groups;
  const int oh = (in.h() + 2 * pad - w.h()) / stride + 1, ow = (in.w() + 2 * pad - w.w()) / stride + 1;
  Tensor4<T> out(in.n(), cout, oh, ow);
  for (int n = 0; n < in.n(); ++n)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double s = bias.empty() ? 0.0 : static_cast<double>(bias[static_cast<std::size_t>(co)]);
          const int g = co / opg;
          for (int ci = 0; ci < cpg; ++ci)
            for (int ky = 0; ky < w.h(); ++ky)
              for (int kx = 0; kx < w.w(); ++kx) {
                const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || ix < 0 || iy >= in.h() || ix >= in.w()) continue;
                s += static_cast<double>(w.at(co, ci, ky, kx)) * static_cast<double>(in.at(n, g * cpg + ci, iy, ix));
              }
          out.at(n, co, oy, ox) = static_cast<T>(s);
        }
  return out;
}

template <class T>
Tensor4<T> relu(Tensor4<T> t) {
  for (auto& v : t.values()) v = v > 0 ? v : T(0);
  return t;
}

template <class T>
Tensor4<T> random_tensor(int n, int c, int h, int w, aefuse::Rng& rng, double scale = 1.0) {
  Tensor4<T> t(n, c, h, w);
  for (auto& v : t.values()) v = static_cast<T>(scale * (2 * rng.uniform() - 1));
  return t;
}

/// Central-difference gradient of f at x.
inline std::vector<double> numeric_grad(const std::function<double(const Tensor4<double>&)>& f, Tensor4<double> x,
                                        double h = 1e-3) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::sqrt(std::max(na, nb));
  return den < 1e-12 ? std::sqrt(d) : std::sqrt(d) / den;
}

/// Weighted sum of a tensor, the scalar probe used in gradient checks.
inline double dot(const Tensor4<double>& t, const Tensor4<double>& w) {
  double s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * w[i];
  return s;
}

// Trainable counts for the default options (2 inputs, width 64, 8 groups),
// added up block by block: conv = cin*cout*k*k/groups + cout, BN = 2c.
inline const std::map<std::string, std::size_t>& builtin_param_counts() {
  static const std::map<std::string, std::size_t> m = [] {
    const std::size_t c1 = 2 * 64 * 9 + 64, bn64 = 128, c2 = 64 * 9 + 1;
    const std::size_t base = c1 + bn64 + c2;
    const std::size_t gc = (64 * 8 * 9 + 64) + bn64;
    const std::size_t fire16 = (64 * 16 + 16) + (16 * 32 + 32) + (16 * 32 * 9 + 32);
    const std::size_t fire8 = (64 * 8 + 8) + (8 * 32 + 32) + (8 * 32 * 9 + 32);
    const std::size_t inc = (64 * 16 + 16) + (64 * 32 * 9 + 32) + (64 * 16 * 25 + 16);
    const std::size_t inc_half = (64 * 8 + 8) + (64 * 16 * 9 + 16) + (64 * 8 * 25 + 8);
    const std::size_t m_net = (2 * 32 * 9 + 32) + 64 + 2 * ((32 * 8 + 8) + (8 * 16 + 16) + (8 * 16 * 9 + 16)) +
                              (64 * 32 * 9 + 32) + 64 + (64 * 9 + 1);
    return std::map<std::string, std::size_t>{
        {"regular", base + (64 * 64 * 9 + 64) + bn64},
        {"gcb", base + gc},
        {"separable", base + (64 * 9 + 64) + (64 * 64 + 64) + bn64},
        {"squeeze", base + fire16 + bn64},
        {"inception", base + inc + bn64},
        {"gcb_inception", base + gc + inc_half + 64 + (32 * 64 + 64) + bn64},
        {"squeeze_gcb", base + fire8 + bn64 + gc},
        {"squeeze2_gcb", base + 2 * (fire8 + bn64) + gc},
        {"m", m_net},
    };
  }();
  return m;
}

}  // namespace oracle
