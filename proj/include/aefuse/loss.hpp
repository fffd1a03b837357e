#pragma once

// Training losses: 0.8 * MSE + 0.2 * (1 - SSIM) with analytic gradients.

#include <string>

#include "aefuse/errors.hpp"
#include "aefuse/image.hpp"
#include "aefuse/metrics.hpp"
#include "aefuse/tensor.hpp"

namespace aefuse {

inline constexpr double kLossMseWeight = 0.8;
inline constexpr double kLossSsimWeight = 0.2;

template <class T>
struct LossResult {
  double loss = 0;
  Tensor4<T> grad;  // d loss / d pred, same shape as pred
};

namespace loss_detail {

template <class T>
Plane to_plane(const Tensor4<T>& pred) {
  if (pred.n() != 1 || pred.c() != 1) throw DimensionError("loss expects a (1,1,H,W) prediction, got " + pred.shape().str());
  Plane p(pred.w(), pred.h());
  for (std::size_t i = 0; i < p.size(); ++i) p.data[i] = static_cast<double>(pred[i]);
  return p;
}

/// Mean SSIM of x against the fixed target y and its gradient w.r.t. x.
inline double ssim_with_grad(const Plane& x, const Plane& y, Plane& grad, const SsimParams& p = {}) {
  if (std::min(x.width, x.height) < p.window) throw DimensionError("ssim loss: image smaller than window");
  const Plane k = gaussian_kernel(p.window, p.sigma);
  const SsimMoments m(x, y, k);
  const std::size_t n = x.size();
  Plane d_mu(x.width, x.height), d_xx(x.width, x.height), d_xy(x.width, x.height);
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double mx = m.mu_x.data[i], my = m.mu_y.data[i];
    const double a1 = 2 * mx * my + p.c1;
    const double a2 = 2 * (m.xy.data[i] - mx * my) + p.c2;
    const double b1 = mx * mx + my * my + p.c1;
    const double b2 = (m.xx.data[i] - mx * mx) + (m.yy.data[i] - my * my) + p.c2;
    const double s = a1 * a2 / (b1 * b2);
    sum += s;
    d_mu.data[i] = (2 * my * a2 - 2 * my * a1) / (b1 * b2) - s * (2 * mx / b1 - 2 * mx / b2);
    d_xx.data[i] = -s / b2;
    d_xy.data[i] = 2 * a1 / (b1 * b2);
  }
  const Plane g_mu = filter2_same_adjoint(d_mu, k);
  const Plane g_xx = filter2_same_adjoint(d_xx, k);
  const Plane g_xy = filter2_same_adjoint(d_xy, k);
  grad = Plane(x.width, x.height);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    grad.data[i] = inv_n * (g_mu.data[i] + 2 * x.data[i] * g_xx.data[i] + y.data[i] * g_xy.data[i]);
  return sum * inv_n;
}

}  // namespace loss_detail

/// Loss of a (1,1,H,W) prediction against the bank optimum.
template <class T>
LossResult<T> loss_to_optimal(const Tensor4<T>& pred, const ImageGray& optimal) {
  const Plane x = loss_detail::to_plane(pred);
  if (x.width != optimal.width() || x.height != optimal.height())
    throw DimensionError("loss: prediction " + pred.shape().str() + " does not match target " +
                         std::to_string(optimal.width()) + "x" + std::to_string(optimal.height()));
  const Plane& y = optimal.plane();
  Plane g_ssim;
  const double s = loss_detail::ssim_with_grad(x, y, g_ssim);
  const double n = static_cast<double>(x.size());
  double mse = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mse += (x.data[i] - y.data[i]) * (x.data[i] - y.data[i]);
  mse /= n;
  LossResult<T> r;
  r.loss = kLossMseWeight * mse + kLossSsimWeight * (1.0 - s);
  r.grad = Tensor4<T>(pred.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    r.grad[i] = static_cast<T>(kLossMseWeight * 2.0 * (x.data[i] - y.data[i]) / n - kLossSsimWeight * g_ssim.data[i]);
  return r;
}

/// Mean of the losses against both sources.
template <class T>
LossResult<T> supervised_loss(const Tensor4<T>& pred, const ImagePair& pair) {
  LossResult<T> a = loss_to_optimal(pred, pair.a);
  const LossResult<T> b = loss_to_optimal(pred, pair.b);
  a.loss = 0.5 * (a.loss + b.loss);
  a.grad += b.grad;
  a.grad *= T(0.5);
  return a;
}

}  // namespace aefuse
