#pragma once

// Pair directories and seeded synthetic pairs.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "aefuse/errors.hpp"
#include "aefuse/image.hpp"
#include "aefuse/random.hpp"

namespace aefuse {

namespace dataset_detail {

inline void scan_pairs(const std::filesystem::path& dir, Task task, const std::string& prefix,
                       std::vector<ImagePair>& out) {
  namespace fs = std::filesystem;
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    const std::string suffix = "_a.pgm";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  for (const auto& id : ids) {
    const fs::path b = dir / (id + "_b.pgm");
    if (!fs::exists(b)) throw IoError("missing partner '" + b.string() + "'");
    out.emplace_back(load_pgm(dir / (id + "_a.pgm")), load_pgm(b), prefix + id, task);
  }
}

}  // namespace dataset_detail

/// Loads `<id>_a.pgm` / `<id>_b.pgm` pairs. Subdirectories named after a task
/// ("multi_focus", ...) contribute pairs of that task with ids "<task>/<id>";
/// files directly in `dir` get `default_task`. Pairs are ordered by id.
inline std::vector<ImagePair> load_dataset(const std::filesystem::path& dir, Task default_task = Task::ir_visible) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: '" + dir.string() + "'");
  std::vector<ImagePair> out;
  dataset_detail::scan_pairs(dir, default_task, "", out);
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& sub : subdirs) {
    Task t;
    try {
      t = parse_task(sub.filename().string());
    } catch (const ParseError&) {
      continue;
    }
    dataset_detail::scan_pairs(sub, t, sub.filename().string() + "/", out);
  }
  if (out.empty()) throw EmptyInputError("no image pairs in '" + dir.string() + "'");
  std::sort(out.begin(), out.end(), [](const ImagePair& x, const ImagePair& y) { return x.pair_id < y.pair_id; });
  return out;
}

inline void save_pair(const ImagePair& pair, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_pgm(pair.a, dir / (pair.pair_id + "_a.pgm"));
  save_pgm(pair.b, dir / (pair.pair_id + "_b.pgm"));
}

/// Smooth random scene: a sum of a few seeded sinusoids and blobs in [0.1, 0.9].
inline ImageGray synthetic_scene(int w, int h, Rng& rng) {
  Plane p(w, h);
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 4; ++i)
    waves.push_back({rng.uniform(0.02, 0.35), rng.uniform(0.02, 0.35), rng.uniform(0, 6.283185307179586),
                     rng.uniform(0.3, 1.0)});
  double norm = 0;
  for (const auto& wv : waves) norm += wv.amp;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = 0;
      for (const auto& wv : waves) v += wv.amp * std::sin(wv.fx * x + wv.fy * y + wv.phase);
      p(x, y) = 0.5 + 0.4 * v / norm;
    }
  return ImageGray(std::move(p));
}

inline ImageGray box_blur(const ImageGray& img, int radius) {
  return ImageGray::clamped(filter2_same(img, box_kernel(2 * radius + 1)));
}

/// Multi-focus pair: source a keeps the left half sharp, b the right half.
inline ImagePair multi_focus_pair(const ImageGray& scene, const std::string& id, int blur_radius = 3) {
  const ImageGray blurred = box_blur(scene, blur_radius);
  Plane a = scene.plane(), b = scene.plane();
  for (int y = 0; y < scene.height(); ++y)
    for (int x = 0; x < scene.width(); ++x) {
      if (x < scene.width() / 2)
        b(x, y) = blurred(x, y);
      else
        a(x, y) = blurred(x, y);
    }
  return ImagePair(ImageGray(std::move(a)), ImageGray(std::move(b)), id, Task::multi_focus);
}

/// Exposure pair: under- and over-exposed gamma renditions of one scene.
inline ImagePair multi_exposure_pair(const ImageGray& scene, const std::string& id) {
  Plane a = scene.plane(), b = scene.plane();
  for (std::size_t i = 0; i < a.size(); ++i) {
    a.data[i] = std::pow(scene.pixels()[i], 2.2);
    b.data[i] = std::pow(scene.pixels()[i], 1.0 / 2.2);
  }
  return ImagePair(ImageGray(std::move(a)), ImageGray(std::move(b)), id, Task::multi_exposure);
}

/// Modality-style pair: a carries the scene, b a few bright seeded targets on
/// an attenuated copy.
inline ImagePair ir_visible_pair(const ImageGray& scene, const std::string& id, Rng& rng) {
  Plane a = scene.plane(), b = scene.plane();
  for (auto& v : b.data) v *= 0.35;
  for (int k = 0; k < 3; ++k) {
    const double cx = rng.uniform(0, scene.width()), cy = rng.uniform(0, scene.height());
    const double r = rng.uniform(2.0, std::max(3.0, scene.width() / 6.0));
    for (int y = 0; y < scene.height(); ++y)
      for (int x = 0; x < scene.width(); ++x) {
        const double d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (r * r);
        b(x, y) = std::min(1.0, b(x, y) + 0.6 * std::exp(-d2));
      }
  }
  return ImagePair(ImageGray(std::move(a)), ImageGray(std::move(b)), id, Task::ir_visible);
}

/// Seeded synthetic set of `count` pairs of the given task, ids "syn000"...
inline std::vector<ImagePair> synthetic_dataset(std::size_t count, int w, int h, std::uint64_t seed,
                                                Task task = Task::multi_focus) {
  Rng rng(seed);
  std::vector<ImagePair> out;
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "syn%03zu", i);
    const ImageGray scene = synthetic_scene(w, h, rng);
    switch (task) {
      case Task::multi_exposure:
        out.push_back(multi_exposure_pair(scene, id));
        break;
      case Task::multi_focus:
        out.push_back(multi_focus_pair(scene, id));
        break;
      default: {
        ImagePair p = ir_visible_pair(scene, id, rng);
        p.task = task;
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

}  // namespace aefuse
