#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aefuse/errors.hpp"

namespace aefuse {

// Raw real-valued raster. Filters and intermediate metric maps live here;
// values are unconstrained.
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
    if (w < 1 || h < 1) throw DimensionError("plane dimensions must be >= 1");
  }
  Plane(int w, int h, std::vector<double> values)
      : width(w), height(h), data(std::move(values)) {
    if (w < 1 || h < 1) throw DimensionError("plane dimensions must be >= 1");
    if (data.size() != static_cast<std::size_t>(w) * h)
      throw DimensionError("plane data length does not match width*height");
  }

  double& operator()(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double operator()(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Plane& o) const { return width == o.width && height == o.height; }
};

// Normalized single-channel image, every intensity in [0,1].
class ImageGray {
 public:
  ImageGray() = default;
  ImageGray(int w, int h, double fill = 0.0) : plane_(w, h, fill) { validate(); }
  ImageGray(int w, int h, std::vector<double> values) : plane_(w, h, std::move(values)) {
    validate();
  }
  explicit ImageGray(Plane p) : plane_(std::move(p)) { validate(); }

  static ImageGray clamped(Plane p) {
    for (double& v : p.data) v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
    return ImageGray(std::move(p));
  }

  int width() const { return plane_.width; }
  int height() const { return plane_.height; }
  std::size_t size() const { return plane_.size(); }
  double operator()(int x, int y) const { return plane_(x, y); }
  std::span<const double> pixels() const { return plane_.data; }
  const Plane& plane() const { return plane_; }
  bool same_shape(const ImageGray& o) const { return plane_.same_shape(o.plane_); }

  friend bool operator==(const ImageGray& a, const ImageGray& b) {
    return a.same_shape(b) && a.plane_.data == b.plane_.data;
  }

 private:
  void validate() const {
    for (double v : plane_.data)
      if (!(v >= 0.0 && v <= 1.0)) throw RangeError("image intensity outside [0,1]");
  }

  Plane plane_;
};

enum class Task { multi_exposure, multi_focus, medical, ir_visible, cvs };

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::multi_exposure: return "multi_exposure";
    case Task::multi_focus: return "multi_focus";
    case Task::medical: return "medical";
    case Task::ir_visible: return "ir_visible";
    case Task::cvs: return "cvs";
  }
  return "unknown";
}

inline Task parse_task(std::string_view s) {
  for (Task t : {Task::multi_exposure, Task::multi_focus, Task::medical, Task::ir_visible, Task::cvs})
    if (to_string(t) == s) return t;
  throw ParseError("unknown task '" + std::string(s) + "'");
}

struct ImagePair {
  ImageGray a;
  ImageGray b;
  std::string pair_id;
  Task task = Task::ir_visible;

  ImagePair() = default;
  ImagePair(ImageGray first, ImageGray second, std::string id, Task t = Task::ir_visible)
      : a(std::move(first)), b(std::move(second)), pair_id(std::move(id)), task(t) {
    if (!a.same_shape(b)) throw DimensionError("pair sources differ in size");
  }

  int width() const { return a.width(); }
  int height() const { return a.height(); }
};

// ---------------------------------------------------------------------------
// PGM / PPM I/O

namespace detail {

inline void skip_pnm_space(std::string_view buf, std::size_t& pos) {
  while (pos < buf.size()) {
    char c = buf[pos];
    if (c == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++pos;
    } else {
      break;
    }
  }
}

inline long read_pnm_int(std::string_view buf, std::size_t& pos) {
  skip_pnm_space(buf, pos);
  long v = 0;
  std::size_t start = pos;
  while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
    v = v * 10 + (buf[pos] - '0');
    if (v > (1L << 30)) throw ParseError("PNM header value too large");
    ++pos;
  }
  if (pos == start) throw ParseError("PNM header: expected an integer");
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct PnmHeader {
  char kind = 0;  // '5' or '6'
  long width = 0, height = 0, maxval = 0;
  std::size_t payload = 0;
};

inline PnmHeader parse_pnm_header(std::string_view buf) {
  if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '5' && buf[1] != '6'))
    throw ParseError("not a binary PGM/PPM (expected P5 or P6)");
  PnmHeader h;
  h.kind = buf[1];
  std::size_t pos = 2;
  h.width = read_pnm_int(buf, pos);
  h.height = read_pnm_int(buf, pos);
  h.maxval = read_pnm_int(buf, pos);
  if (h.width < 1 || h.height < 1) throw ParseError("PNM dimensions must be positive");
  if (h.maxval < 1 || h.maxval > 65535) throw ParseError("PNM maxval out of range");
  if (pos >= buf.size()) throw TruncationError("PNM payload missing");
  // exactly one whitespace byte separates header and raster
  char c = buf[pos];
  if (c != ' ' && c != '\t' && c != '\r' && c != '\n') throw ParseError("PNM header not terminated");
  h.payload = pos + 1;
  return h;
}

inline double pnm_sample(std::string_view buf, std::size_t& pos, bool wide) {
  if (!wide) return static_cast<unsigned char>(buf[pos++]);
  unsigned hi = static_cast<unsigned char>(buf[pos]);
  unsigned lo = static_cast<unsigned char>(buf[pos + 1]);
  pos += 2;
  return static_cast<double>((hi << 8) | lo);
}

}  // namespace detail

inline ImageGray decode_pgm(std::string_view buf) {
  auto h = detail::parse_pnm_header(buf);
  if (h.kind != '5') throw ParseError("not a P5 graymap");
  const bool wide = h.maxval > 255;
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  const std::size_t need = n * (wide ? 2 : 1);
  if (buf.size() - h.payload < need) throw TruncationError("PGM pixel payload truncated");
  std::vector<double> px(n);
  std::size_t pos = h.payload;
  const double scale = 1.0 / static_cast<double>(h.maxval);
  for (auto& v : px) v = std::min(1.0, detail::pnm_sample(buf, pos, wide) * scale);
  return ImageGray(static_cast<int>(h.width), static_cast<int>(h.height), std::move(px));
}

inline ImageGray load_pgm(const std::filesystem::path& path) {
  return decode_pgm(detail::read_file(path));
}

// P5 or P6; colour rasters are reduced with BT.601 luma.
inline ImageGray load_pnm(const std::filesystem::path& path) {
  const std::string buf = detail::read_file(path);
  auto h = detail::parse_pnm_header(buf);
  if (h.kind == '5') return decode_pgm(buf);
  const bool wide = h.maxval > 255;
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  if (buf.size() - h.payload < n * 3 * (wide ? 2 : 1))
    throw TruncationError("PPM pixel payload truncated");
  std::vector<double> px(n);
  std::size_t pos = h.payload;
  const double scale = 1.0 / static_cast<double>(h.maxval);
  for (auto& v : px) {
    double r = detail::pnm_sample(buf, pos, wide);
    double g = detail::pnm_sample(buf, pos, wide);
    double b = detail::pnm_sample(buf, pos, wide);
    v = std::clamp((0.299 * r + 0.587 * g + 0.114 * b) * scale, 0.0, 1.0);
  }
  return ImageGray(static_cast<int>(h.width), static_cast<int>(h.height), std::move(px));
}

// Round-half-up quantization to 8 bits.
inline std::uint8_t quantize8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v * 255.0 + 0.5), 0.0, 255.0));
}

inline std::string encode_pgm(const ImageGray& img) {
  std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  out.reserve(out.size() + img.size());
  for (double v : img.pixels()) out.push_back(static_cast<char>(quantize8(v)));
  return out;
}

inline void save_pgm(const ImageGray& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  const std::string bytes = encode_pgm(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Geometry

inline ImageGray resize_bilinear(const ImageGray& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw DimensionError("resize target must be >= 1x1");
  if (out_w == img.width() && out_h == img.height()) return img;
  const double sx = static_cast<double>(img.width()) / out_w;
  const double sy = static_cast<double>(img.height()) / out_h;
  Plane out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, img.height() - 1);
    double ty = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, img.width() - 1);
      double tx = fx - x0;
      double top = img(x0, y0) + (img(x1, y0) - img(x0, y0)) * tx;
      double bot = img(x0, y1) + (img(x1, y1) - img(x0, y1)) * tx;
      out(x, y) = top + (bot - top) * ty;
    }
  }
  return ImageGray::clamped(std::move(out));
}

inline Plane crop(const Plane& p, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || x0 + w > p.width || y0 + h > p.height)
    throw DimensionError("crop window outside the plane");
  Plane out(w, h);
  for (int y = 0; y < h; ++y)
    std::copy_n(p.data.begin() + static_cast<std::ptrdiff_t>(y0 + y) * p.width + x0, w,
                out.data.begin() + static_cast<std::ptrdiff_t>(y) * w);
  return out;
}

inline ImageGray crop(const ImageGray& img, int x0, int y0, int w, int h) {
  return ImageGray(crop(img.plane(), x0, y0, w, h));
}

inline std::size_t patch_count(int width, int height, int size, int stride) {
  if (size > std::min(width, height)) return 0;
  return static_cast<std::size_t>((height - size) / stride + 1) *
         static_cast<std::size_t>((width - size) / stride + 1);
}

// Co-located patches, row-major over patch origins; trailing remainder dropped.
inline std::vector<ImagePair> extract_patches(const ImagePair& pair, int size = 128, int stride = 128) {
  if (size < 1 || stride < 1) throw DimensionError("patch size and stride must be >= 1");
  if (size > std::min(pair.width(), pair.height()))
    throw DimensionError("patch size exceeds image dimensions");
  std::vector<ImagePair> out;
  out.reserve(patch_count(pair.width(), pair.height(), size, stride));
  int index = 0;
  for (int y = 0; y + size <= pair.height(); y += stride) {
    for (int x = 0; x + size <= pair.width(); x += stride) {
      out.emplace_back(crop(pair.a, x, y, size, size), crop(pair.b, x, y, size, size),
                       pair.pair_id + "#" + std::to_string(index++), pair.task);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spatial filtering (correlation, symmetric border: d c b a | a b c d)

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

inline Plane filter2_same(const Plane& img, const Plane& kernel) {
  if (kernel.width % 2 == 0 || kernel.height % 2 == 0)
    throw DimensionError("filter kernel dimensions must be odd");
  const int rx = kernel.width / 2, ry = kernel.height / 2;
  const int w = img.width, h = img.height;
  std::vector<int> xmap(static_cast<std::size_t>(w + 2 * rx));
  for (int i = 0; i < w + 2 * rx; ++i) xmap[i] = reflect_index(i - rx, w);
  Plane out(w, h);
  for (int y = 0; y < h; ++y) {
    double* orow = &out.data[static_cast<std::size_t>(y) * w];
    for (int ky = 0; ky < kernel.height; ++ky) {
      const double* irow = &img.data[static_cast<std::size_t>(reflect_index(y + ky - ry, h)) * w];
      for (int kx = 0; kx < kernel.width; ++kx) {
        const double k = kernel(kx, ky);
        if (k == 0.0) continue;
        const int* xm = &xmap[kx];
        for (int x = 0; x < w; ++x) orow[x] += k * irow[xm[x]];
      }
    }
  }
  return out;
}

inline Plane filter2_same(const ImageGray& img, const Plane& kernel) {
  return filter2_same(img.plane(), kernel);
}

// Adjoint of filter2_same: for every output gradient g, scatter k*g back onto
// the (reflected) source pixel it was read from.
inline Plane filter2_same_adjoint(const Plane& grad_out, const Plane& kernel) {
  if (kernel.width % 2 == 0 || kernel.height % 2 == 0)
    throw DimensionError("filter kernel dimensions must be odd");
  const int rx = kernel.width / 2, ry = kernel.height / 2;
  const int w = grad_out.width, h = grad_out.height;
  std::vector<int> xmap(static_cast<std::size_t>(w + 2 * rx));
  for (int i = 0; i < w + 2 * rx; ++i) xmap[i] = reflect_index(i - rx, w);
  Plane out(w, h);
  for (int y = 0; y < h; ++y) {
    const double* grow = &grad_out.data[static_cast<std::size_t>(y) * w];
    for (int ky = 0; ky < kernel.height; ++ky) {
      double* orow = &out.data[static_cast<std::size_t>(reflect_index(y + ky - ry, h)) * w];
      for (int kx = 0; kx < kernel.width; ++kx) {
        const double k = kernel(kx, ky);
        if (k == 0.0) continue;
        const int* xm = &xmap[kx];
        for (int x = 0; x < w; ++x) orow[xm[x]] += k * grow[x];
      }
    }
  }
  return out;
}

// Normalized size x size Gaussian.
inline Plane gaussian_kernel(int size, double sigma) {
  if (size % 2 == 0) throw DimensionError("gaussian kernel size must be odd");
  Plane k(size, size);
  const int r = size / 2;
  double sum = 0.0;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) {
      double v = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
      k(x + r, y + r) = v;
      sum += v;
    }
  for (double& v : k.data) v /= sum;
  return k;
}

inline Plane box_kernel(int size) {
  return Plane(size, size, 1.0 / (static_cast<double>(size) * size));
}

// Outer product of a 1-D tap vector with itself.
inline Plane separable_kernel(std::span<const double> taps) {
  const int n = static_cast<int>(taps.size());
  Plane k(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) k(x, y) = taps[x] * taps[y];
  return k;
}

}  // namespace aefuse
