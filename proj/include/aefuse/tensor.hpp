#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "aefuse/errors.hpp"
#include "aefuse/image.hpp"

namespace aefuse {

struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * static_cast<std::size_t>(h) * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  friend bool operator==(const Shape4&, const Shape4&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

/// Dense NCHW tensor.
template <class T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;
  explicit Tensor4(Shape4 s, T fill = T(0)) : shape_(s), data_(s.size(), fill) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw DimensionError("negative tensor dimension");
  }
  Tensor4(int n, int c, int h, int w, T fill = T(0)) : Tensor4(Shape4{n, c, h, w}, fill) {}
  Tensor4(Shape4 s, std::vector<T> values) : shape_(s), data_(std::move(values)) {
    if (data_.size() != s.size()) throw DimensionError("tensor data length does not match shape");
  }

  const Shape4& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(int n, int c, int y = 0, int x = 0) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  T at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

  // First element of the (n, c) spatial plane.
  T* plane(int n, int c) { return data_.data() + offset(n, c); }
  const T* plane(int n, int c) const { return data_.data() + offset(n, c); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor4<U> cast() const {
    std::vector<U> v(data_.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<U>(data_[i]);
    return Tensor4<U>(shape_, std::move(v));
  }

  Tensor4& operator+=(const Tensor4& o) {
    if (!(shape_ == o.shape_)) throw DimensionError("tensor add: shape mismatch " + shape_.str() + " vs " + o.shape_.str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor4& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const Tensor4& a, const Tensor4& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape4 shape_;
  std::vector<T> data_;
};

/// Stack the two sources of a pair as a (1, 2, H, W) tensor.
template <class T>
Tensor4<T> pair_tensor(const ImagePair& pair) {
  Tensor4<T> t(1, 2, pair.height(), pair.width());
  for (std::size_t i = 0; i < pair.a.size(); ++i) {
    t.plane(0, 0)[i] = static_cast<T>(pair.a.pixels()[i]);
    t.plane(0, 1)[i] = static_cast<T>(pair.b.pixels()[i]);
  }
  return t;
}

template <class T>
Tensor4<T> image_tensor(const ImageGray& img) {
  Tensor4<T> t(1, 1, img.height(), img.width());
  for (std::size_t i = 0; i < img.size(); ++i) t[i] = static_cast<T>(img.pixels()[i]);
  return t;
}

/// Channel 0 of sample n as an image, clamped into [0,1].
template <class T>
ImageGray tensor_image(const Tensor4<T>& t, int n = 0, int c = 0) {
  Plane p(t.w(), t.h());
  const T* src = t.plane(n, c);
  for (std::size_t i = 0; i < p.size(); ++i) p.data[i] = static_cast<double>(src[i]);
  return ImageGray::clamped(std::move(p));
}

template <class T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw DimensionError("concat: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor4<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  const std::size_t pa = a.shape().plane() * a.c(), pb = b.shape().plane() * b.c();
  for (int n = 0; n < a.n(); ++n) {
    std::copy_n(a.plane(n, 0), pa, out.plane(n, 0));
    std::copy_n(b.plane(n, 0), pb, out.plane(n, a.c()));
  }
  return out;
}

/// Channels [c0, c0 + count).
template <class T>
Tensor4<T> slice_channels(const Tensor4<T>& t, int c0, int count) {
  if (c0 < 0 || count < 0 || c0 + count > t.c()) throw DimensionError("slice_channels: out of range");
  Tensor4<T> out(t.n(), count, t.h(), t.w());
  for (int n = 0; n < t.n(); ++n) std::copy_n(t.plane(n, c0), t.shape().plane() * count, out.plane(n, 0));
  return out;
}

/// Sample n as a batch of one.
template <class T>
Tensor4<T> slice_batch(const Tensor4<T>& t, int n) {
  Tensor4<T> out(1, t.c(), t.h(), t.w());
  std::copy_n(t.plane(n, 0), out.size(), out.plane(0, 0));
  return out;
}

template <class T>
Tensor4<T> stack_batch(const std::vector<Tensor4<T>>& samples) {
  if (samples.empty()) throw EmptyInputError("stack_batch: no samples");
  const Shape4 s = samples.front().shape();
  Tensor4<T> out(static_cast<int>(samples.size()), s.c, s.h, s.w);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].c() != s.c || samples[i].h() != s.h || samples[i].w() != s.w || samples[i].n() != 1)
      throw DimensionError("stack_batch: sample shapes differ");
    std::copy_n(samples[i].plane(0, 0), samples[i].size(), out.plane(static_cast<int>(i), 0));
  }
  return out;
}

}  // namespace aefuse
