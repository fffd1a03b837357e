#pragma once

// Forward and backward passes of the micro-CNN building blocks. Every
// backward is hand-derived and checked against central differences in the
// test suite.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "aefuse/errors.hpp"
#include "aefuse/tensor.hpp"

namespace aefuse {

enum class Mode { train, eval };

struct ConvGeom {
  int stride = 1;
  int pad = 0;
  int groups = 1;
};

template <class T>
struct ConvGrads {
  Tensor4<T> input;
  Tensor4<T> weights;
  Tensor4<T> bias;  // (cout, 1, 1, 1)
};

namespace layer_detail {

struct ConvDims {
  int n, cin, h, w, cout, cin_g, cout_g, kh, kw, oh, ow;
};

template <class T>
ConvDims conv_dims(const Tensor4<T>& input, const Tensor4<T>& weights, const ConvGeom& g) {
  if (g.groups < 1 || g.stride < 1 || g.pad < 0) throw SpecError("conv: invalid geometry");
  ConvDims d{};
  d.n = input.n();
  d.cin = input.c();
  d.h = input.h();
  d.w = input.w();
  d.cout = weights.n();
  d.kh = weights.h();
  d.kw = weights.w();
  if (d.cin % g.groups != 0 || d.cout % g.groups != 0)
    throw SpecError("conv: groups must divide input and output channels");
  d.cin_g = d.cin / g.groups;
  d.cout_g = d.cout / g.groups;
  if (weights.c() != d.cin_g)
    throw SpecError("conv: weight tensor expects " + std::to_string(weights.c()) + " channels per group, input has " +
                    std::to_string(d.cin_g));
  d.oh = (d.h + 2 * g.pad - d.kh) / g.stride + 1;
  d.ow = (d.w + 2 * g.pad - d.kw) / g.stride + 1;
  if (d.oh < 1 || d.ow < 1) throw DimensionError("conv: kernel larger than padded input");
  return d;
}

// Output columns [lo, hi) whose tap kx lands inside the input row.
inline void valid_cols(int kx, int pad, int stride, int w, int ow, int& lo, int& hi) {
  const int off = kx - pad;
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  hi = (w - 1 - off) >= 0 ? std::min(ow, (w - 1 - off) / stride + 1) : 0;
}

}  // namespace layer_detail

/// Grouped cross-correlation. weights: (cout, cin/groups, kh, kw); bias may
/// be empty or hold cout values.
template <class T>
Tensor4<T> conv2d_forward(const Tensor4<T>& input, const Tensor4<T>& weights, const Tensor4<T>& bias,
                          const ConvGeom& g) {
  const auto d = layer_detail::conv_dims(input, weights, g);
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(d.cout)) throw SpecError("conv: bias size");
  Tensor4<T> out(d.n, d.cout, d.oh, d.ow);
  for (int n = 0; n < d.n; ++n) {
    for (int oc = 0; oc < d.cout; ++oc) {
      T* o = out.plane(n, oc);
      if (!bias.empty()) std::fill_n(o, static_cast<std::size_t>(d.oh) * d.ow, bias[oc]);
      const int grp = oc / d.cout_g;
      for (int icl = 0; icl < d.cin_g; ++icl) {
        const T* in = input.plane(n, grp * d.cin_g + icl);
        const T* wk = weights.plane(oc, icl);
        for (int ky = 0; ky < d.kh; ++ky) {
          for (int kx = 0; kx < d.kw; ++kx) {
            const T wv = wk[ky * d.kw + kx];
            int lo, hi;
            layer_detail::valid_cols(kx, g.pad, g.stride, d.w, d.ow, lo, hi);
            for (int oy = 0; oy < d.oh; ++oy) {
              const int iy = oy * g.stride + ky - g.pad;
              if (iy < 0 || iy >= d.h) continue;
              const T* irow = in + static_cast<std::size_t>(iy) * d.w;
              const int off = kx - g.pad;
              T* orow = o + static_cast<std::size_t>(oy) * d.ow;
              if (g.stride == 1) {
                for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox + off];
              } else {
                for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox * g.stride + off];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <class T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& input, const Tensor4<T>& weights, const Tensor4<T>& grad_out,
                             const ConvGeom& g) {
  const auto d = layer_detail::conv_dims(input, weights, g);
  if (!(grad_out.shape() == Shape4{d.n, d.cout, d.oh, d.ow}))
    throw SpecError("conv backward: grad_out shape " + grad_out.shape().str() + " inconsistent with forward");
  ConvGrads<T> r{Tensor4<T>(input.shape()), Tensor4<T>(weights.shape()), Tensor4<T>(d.cout, 1, 1, 1)};
  for (int n = 0; n < d.n; ++n) {
    for (int oc = 0; oc < d.cout; ++oc) {
      const T* go = grad_out.plane(n, oc);
      T bsum = 0;
      for (std::size_t i = 0; i < static_cast<std::size_t>(d.oh) * d.ow; ++i) bsum += go[i];
      r.bias[oc] += bsum;
      const int grp = oc / d.cout_g;
      for (int icl = 0; icl < d.cin_g; ++icl) {
        const T* in = input.plane(n, grp * d.cin_g + icl);
        T* gin = r.input.plane(n, grp * d.cin_g + icl);
        const T* wk = weights.plane(oc, icl);
        T* gw = r.weights.plane(oc, icl);
        for (int ky = 0; ky < d.kh; ++ky) {
          for (int kx = 0; kx < d.kw; ++kx) {
            const T wv = wk[ky * d.kw + kx];
            T acc = 0;
            int lo, hi;
            layer_detail::valid_cols(kx, g.pad, g.stride, d.w, d.ow, lo, hi);
            for (int oy = 0; oy < d.oh; ++oy) {
              const int iy = oy * g.stride + ky - g.pad;
              if (iy < 0 || iy >= d.h) continue;
              const std::size_t base = static_cast<std::size_t>(iy) * d.w;
              const T* irow = in + base;
              T* girow = gin + base;
              const T* grow = go + static_cast<std::size_t>(oy) * d.ow;
              const int off = kx - g.pad;
              for (int ox = lo; ox < hi; ++ox) {
                const int ix = ox * g.stride + off;
                acc += grow[ox] * irow[ix];
                girow[ix] += wv * grow[ox];
              }
            }
            gw[ky * d.kw + kx] += acc;
          }
        }
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Channel shuffle: view channels as (groups, c/groups), transpose, flatten.

inline std::vector<int> shuffle_permutation(int channels, int groups) {
  if (groups < 1 || channels % groups != 0) throw SpecError("channel_shuffle: groups must divide channels");
  const int per = channels / groups;
  std::vector<int> src(channels);
  for (int i = 0; i < per; ++i)
    for (int j = 0; j < groups; ++j) src[i * groups + j] = j * per + i;
  return src;  // output channel k reads input channel src[k]
}

template <class T>
Tensor4<T> channel_shuffle(const Tensor4<T>& input, int groups) {
  const auto src = shuffle_permutation(input.c(), groups);
  Tensor4<T> out(input.shape());
  for (int n = 0; n < input.n(); ++n)
    for (int k = 0; k < input.c(); ++k) std::copy_n(input.plane(n, src[k]), input.shape().plane(), out.plane(n, k));
  return out;
}

template <class T>
Tensor4<T> channel_shuffle_backward(const Tensor4<T>& grad_out, int groups) {
  const auto src = shuffle_permutation(grad_out.c(), groups);
  Tensor4<T> gin(grad_out.shape());
  for (int n = 0; n < grad_out.n(); ++n)
    for (int k = 0; k < grad_out.c(); ++k)
      std::copy_n(grad_out.plane(n, k), grad_out.shape().plane(), gin.plane(n, src[k]));
  return gin;
}

// ---------------------------------------------------------------------------
// Batch normalization

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.9;

template <class T>
struct BnCache {
  Tensor4<T> x_hat;
  std::vector<T> inv_std;
  std::vector<double> batch_mean, batch_var;  // train mode only; var is unbiased
  Mode mode = Mode::eval;
};

template <class T>
struct BnGrads {
  Tensor4<T> input;
  std::vector<T> scale, shift;
};

/// Train mode normalizes with batch statistics (recorded in the cache for
/// bn_update_running); eval mode uses the running estimates.
template <class T>
Tensor4<T> batchnorm_forward(const Tensor4<T>& input, std::span<const T> scale, std::span<const T> shift,
                             std::span<const T> running_mean, std::span<const T> running_var, Mode mode,
                             BnCache<T>* cache = nullptr) {
  const int c = input.c();
  if (static_cast<int>(scale.size()) != c || static_cast<int>(shift.size()) != c ||
      static_cast<int>(running_mean.size()) != c || static_cast<int>(running_var.size()) != c)
    throw SpecError("batchnorm: parameter size does not match channels");
  const std::size_t plane = input.shape().plane();
  const double m = static_cast<double>(plane) * input.n();
  Tensor4<T> out(input.shape());
  Tensor4<T> x_hat(input.shape());
  std::vector<T> inv_std(c);
  std::vector<double> batch_mean, batch_var;
  for (int ch = 0; ch < c; ++ch) {
    double mean, var;
    if (mode == Mode::train) {
      double s = 0;
      for (int n = 0; n < input.n(); ++n) {
        const T* p = input.plane(n, ch);
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      mean = s / m;
      double ss = 0;
      for (int n = 0; n < input.n(); ++n) {
        const T* p = input.plane(n, ch);
        for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mean) * (p[i] - mean);
      }
      var = ss / m;
      batch_mean.push_back(mean);
      batch_var.push_back(m > 1 ? ss / (m - 1) : var);
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const T is = static_cast<T>(1.0 / std::sqrt(var + kBnEpsilon));
    const T mu = static_cast<T>(mean);
    inv_std[ch] = is;
    for (int n = 0; n < input.n(); ++n) {
      const T* p = input.plane(n, ch);
      T* xh = x_hat.plane(n, ch);
      T* o = out.plane(n, ch);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - mu) * is;
        o[i] = scale[ch] * xh[i] + shift[ch];
      }
    }
  }
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
    cache->batch_mean = std::move(batch_mean);
    cache->batch_var = std::move(batch_var);
    cache->mode = mode;
  }
  return out;
}

/// running = 0.9 running + 0.1 batch.
template <class T>
void bn_update_running(std::span<T> running_mean, std::span<T> running_var, const BnCache<T>& cache) {
  if (cache.mode != Mode::train) return;
  for (std::size_t ch = 0; ch < running_mean.size(); ++ch) {
    running_mean[ch] = static_cast<T>(kBnMomentum * running_mean[ch] + (1 - kBnMomentum) * cache.batch_mean[ch]);
    running_var[ch] = static_cast<T>(kBnMomentum * running_var[ch] + (1 - kBnMomentum) * cache.batch_var[ch]);
  }
}

template <class T>
BnGrads<T> batchnorm_backward(const Tensor4<T>& grad_out, std::span<const T> scale, const BnCache<T>& cache) {
  const int c = grad_out.c();
  const std::size_t plane = grad_out.shape().plane();
  const double m = static_cast<double>(plane) * grad_out.n();
  BnGrads<T> g{Tensor4<T>(grad_out.shape()), std::vector<T>(c), std::vector<T>(c)};
  for (int ch = 0; ch < c; ++ch) {
    double sum_dy = 0, sum_dy_xh = 0;
    for (int n = 0; n < grad_out.n(); ++n) {
      const T* dy = grad_out.plane(n, ch);
      const T* xh = cache.x_hat.plane(n, ch);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[i];
        sum_dy_xh += dy[i] * xh[i];
      }
    }
    g.shift[ch] = static_cast<T>(sum_dy);
    g.scale[ch] = static_cast<T>(sum_dy_xh);
    const double k = static_cast<double>(scale[ch]) * cache.inv_std[ch];
    for (int n = 0; n < grad_out.n(); ++n) {
      const T* dy = grad_out.plane(n, ch);
      const T* xh = cache.x_hat.plane(n, ch);
      T* dx = g.input.plane(n, ch);
      if (cache.mode == Mode::train) {
        for (std::size_t i = 0; i < plane; ++i)
          dx[i] = static_cast<T>(k / m * (m * dy[i] - sum_dy - xh[i] * sum_dy_xh));
      } else {
        for (std::size_t i = 0; i < plane; ++i) dx[i] = static_cast<T>(k * dy[i]);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Pointwise activations

template <class T>
Tensor4<T> relu_forward(Tensor4<T> x) {
  for (auto& v : x.values()) v = v > T(0) ? v : T(0);
  return x;
}

// Uses the forward output as the mask.
template <class T>
Tensor4<T> relu_backward(const Tensor4<T>& output, Tensor4<T> grad_out) {
  for (std::size_t i = 0; i < grad_out.size(); ++i)
    if (!(output[i] > T(0))) grad_out[i] = T(0);
  return grad_out;
}

template <class T>
Tensor4<T> sigmoid_forward(Tensor4<T> x) {
  for (auto& v : x.values()) v = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
  return x;
}

template <class T>
Tensor4<T> sigmoid_backward(const Tensor4<T>& output, Tensor4<T> grad_out) {
  for (std::size_t i = 0; i < grad_out.size(); ++i) grad_out[i] *= output[i] * (T(1) - output[i]);
  return grad_out;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling and nearest upsampling

template <class T>
struct PoolResult {
  Tensor4<T> output;
  std::vector<std::size_t> argmax;  // flat input offset per output element
};

template <class T>
PoolResult<T> maxpool2_forward(const Tensor4<T>& input) {
  if (input.h() % 2 != 0 || input.w() % 2 != 0) throw DimensionError("maxpool2: spatial dims must be even");
  PoolResult<T> r{Tensor4<T>(input.n(), input.c(), input.h() / 2, input.w() / 2), {}};
  r.argmax.resize(r.output.size());
  std::size_t k = 0;
  for (int n = 0; n < input.n(); ++n)
    for (int c = 0; c < input.c(); ++c)
      for (int y = 0; y < input.h() / 2; ++y)
        for (int x = 0; x < input.w() / 2; ++x, ++k) {
          // scan order top-left, top-right, bottom-left, bottom-right; strict
          // comparison keeps the first maximum
          std::size_t best = input.offset(n, c, 2 * y, 2 * x);
          for (const auto& [dy, dx] : {std::pair{0, 1}, std::pair{1, 0}, std::pair{1, 1}}) {
            const std::size_t o = input.offset(n, c, 2 * y + dy, 2 * x + dx);
            if (input[o] > input[best]) best = o;
          }
          r.output[k] = input[best];
          r.argmax[k] = best;
        }
  return r;
}

template <class T>
Tensor4<T> maxpool2_backward(const Shape4& input_shape, const std::vector<std::size_t>& argmax,
                             const Tensor4<T>& grad_out) {
  Tensor4<T> gin(input_shape);
  for (std::size_t k = 0; k < grad_out.size(); ++k) gin[argmax[k]] += grad_out[k];
  return gin;
}

template <class T>
Tensor4<T> upsample_nearest(const Tensor4<T>& input) {
  Tensor4<T> out(input.n(), input.c(), input.h() * 2, input.w() * 2);
  for (int n = 0; n < input.n(); ++n)
    for (int c = 0; c < input.c(); ++c)
      for (int y = 0; y < out.h(); ++y)
        for (int x = 0; x < out.w(); ++x) out.at(n, c, y, x) = input.at(n, c, y / 2, x / 2);
  return out;
}

template <class T>
Tensor4<T> upsample_nearest_backward(const Tensor4<T>& grad_out) {
  Tensor4<T> gin(grad_out.n(), grad_out.c(), grad_out.h() / 2, grad_out.w() / 2);
  for (int n = 0; n < grad_out.n(); ++n)
    for (int c = 0; c < grad_out.c(); ++c)
      for (int y = 0; y < grad_out.h(); ++y)
        for (int x = 0; x < grad_out.w(); ++x) gin.at(n, c, y / 2, x / 2) += grad_out.at(n, c, y, x);
  return gin;
}

// ---------------------------------------------------------------------------
// Fire module: 1x1 squeeze + ReLU, then parallel 1x1 / 3x3 expands + ReLU,
// concatenated [expand1, expand3].

template <class T>
struct FireWeights {
  Tensor4<T> squeeze_w, squeeze_b, expand1_w, expand1_b, expand3_w, expand3_b;
};

template <class T>
struct FireCache {
  Tensor4<T> squeezed;  // post-ReLU squeeze activations
};

template <class T>
struct FireGrads {
  Tensor4<T> input;
  FireWeights<T> weights;
};

template <class T>
Tensor4<T> fire_forward(const Tensor4<T>& input, const FireWeights<T>& wt, FireCache<T>* cache = nullptr) {
  if (wt.squeeze_w.c() != input.c()) throw SpecError("fire: squeeze expects " + std::to_string(wt.squeeze_w.c()) + " input channels");
  if (wt.expand1_w.c() != wt.squeeze_w.n() || wt.expand3_w.c() != wt.squeeze_w.n())
    throw SpecError("fire: expand convs do not consume the squeeze output");
  if (wt.squeeze_w.n() >= wt.expand1_w.n() + wt.expand3_w.n())
    throw SpecError("fire: squeeze width must be below total expand width");
  Tensor4<T> s = relu_forward(conv2d_forward(input, wt.squeeze_w, wt.squeeze_b, {1, 0, 1}));
  Tensor4<T> e1 = relu_forward(conv2d_forward(s, wt.expand1_w, wt.expand1_b, {1, 0, 1}));
  Tensor4<T> e3 = relu_forward(conv2d_forward(s, wt.expand3_w, wt.expand3_b, {1, 1, 1}));
  if (cache) cache->squeezed = std::move(s);
  return concat_channels(e1, e3);
}

template <class T>
FireGrads<T> fire_backward(const Tensor4<T>& input, const FireWeights<T>& wt, const FireCache<T>& cache,
                           const Tensor4<T>& output, const Tensor4<T>& grad_out) {
  const int c1 = wt.expand1_w.n(), c3 = wt.expand3_w.n();
  const Tensor4<T> g1 = relu_backward(slice_channels(output, 0, c1), slice_channels(grad_out, 0, c1));
  const Tensor4<T> g3 = relu_backward(slice_channels(output, c1, c3), slice_channels(grad_out, c1, c3));
  auto b1 = conv2d_backward(cache.squeezed, wt.expand1_w, g1, {1, 0, 1});
  auto b3 = conv2d_backward(cache.squeezed, wt.expand3_w, g3, {1, 1, 1});
  b1.input += b3.input;
  const Tensor4<T> gs = relu_backward(cache.squeezed, std::move(b1.input));
  auto bs = conv2d_backward(input, wt.squeeze_w, gs, {1, 0, 1});
  FireGrads<T> r;
  r.input = std::move(bs.input);
  r.weights = {std::move(bs.weights), std::move(bs.bias), std::move(b1.weights),
               std::move(b1.bias),    std::move(b3.weights), std::move(b3.bias)};
  return r;
}

}  // namespace aefuse
