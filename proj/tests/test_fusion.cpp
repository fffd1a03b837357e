#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "aefuse/dataset.hpp"
#include "aefuse/fusion.hpp"
#include "aefuse/random.hpp"

using namespace aefuse;

namespace {

double max_abs_diff(const Plane& x, const Plane& y) {
  double m = 0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x.data[i] - y.data[i]));
  return m;
}

double max_abs_diff(const ImageGray& x, const ImageGray& y) { return max_abs_diff(x.plane(), y.plane()); }

ImageGray binary_noise(int w, int h, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(w) * h);
  for (double& x : v) x = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return ImageGray(w, h, std::move(v));
}

}  // namespace

TEST(Average, Examples) {
  Rng rng(1);
  const ImageGray a = random_image(12, 9, rng), b = random_image(12, 9, rng);
  EXPECT_EQ(fuse_average(ImagePair(a, a, "p")).fused, a);
  const auto c = fuse_average(ImagePair(ImageGray(4, 4, 0.0), ImageGray(4, 4, 1.0), "p"));
  for (double v : c.fused.pixels()) EXPECT_DOUBLE_EQ(v, 0.5);
  const auto f = fuse_average(ImagePair(a, b, "p"));
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_DOUBLE_EQ(f.fused.pixels()[i], (a.pixels()[i] + b.pixels()[i]) / 2);
  EXPECT_EQ(f.fused, fuse_average(ImagePair(b, a, "p")).fused);
  EXPECT_EQ(f.algo_id, "avg");
}

TEST(AbsMax, Examples) {
  const auto c = fuse_absmax(ImagePair(ImageGray(1, 1, 0.9), ImageGray(1, 1, 0.2), "p"));
  EXPECT_DOUBLE_EQ(c.fused(0, 0), 0.9);
  const auto t = fuse_absmax(ImagePair(ImageGray(3, 1, std::vector<double>{0.3, 0.6, 0.5}),
                                       ImageGray(3, 1, std::vector<double>{0.7, 0.4, 0.5}), "p"));
  EXPECT_EQ(t.fused, ImageGray(3, 1, std::vector<double>({0.3, 0.6, 0.5})));
}

TEST(GradientSelect, PrefersSharpSource) {
  Rng rng(2);
  const ImageGray a = random_image(64, 64, rng);
  const ImageGray b = ImageGray::clamped(filter2_same(a, gaussian_kernel(7, 1.5)));
  const auto c = fuse_gradient_select(ImagePair(a, b, "p"));
  int interior = 0, hits = 0;
  for (int y = 3; y < 61; ++y)
    for (int x = 3; x < 61; ++x) {
      ++interior;
      hits += c.fused(x, y) == a(x, y);
    }
  EXPECT_GE(hits, 0.95 * interior);
}

TEST(GradientSelect, SplitFocusDecisionFollowsMidline) {
  Rng rng(3);
  const ImageGray scene = random_image(64, 48, rng);
  const ImagePair pair = multi_focus_pair(scene, "split", 3);
  const Plane d = gradient_decision_map(pair);
  int wrong = 0, counted = 0;
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 64; ++x) {
      if (std::abs(x - 32) <= 6) continue;
      ++counted;
      wrong += (x < 32) != (d(x, y) > 0.5);
    }
  EXPECT_LE(wrong, counted / 100);
  EXPECT_THROW(fuse_gradient_select(pair, 6), DimensionError);
}

TEST(Pyramid, RoundTripAnyShape) {
  Rng rng(4);
  for (const auto& [w, h] : {std::pair{64, 64}, std::pair{37, 23}, std::pair{16, 17}, std::pair{50, 33}}) {
    const Plane p = random_image(w, h, rng).plane();
    for (int levels : {2, 3, 4}) {
      const auto pyr = laplacian_decompose(p, levels);
      EXPECT_EQ(pyr.bands.size(), static_cast<std::size_t>(levels - 1));
      EXPECT_LE(max_abs_diff(laplacian_reconstruct(pyr), p), 1e-6) << w << "x" << h << " L" << levels;
    }
  }
  EXPECT_THROW(laplacian_decompose(Plane(15, 64), 4), DimensionError);
  EXPECT_THROW(laplacian_decompose(Plane(64, 64), 1), DimensionError);
}

TEST(LaplacianFusion, Examples) {
  Rng rng(5);
  const ImageGray a = random_image(64, 64, rng);
  EXPECT_LE(max_abs_diff(fuse_laplacian_pyramid(ImagePair(a, a, "p")).fused, a), 1e-6);
  const auto c = fuse_laplacian_pyramid(ImagePair(ImageGray(32, 32, 0.2), ImageGray(32, 32, 0.6), "p"));
  for (double v : c.fused.pixels()) EXPECT_NEAR(v, 0.4, 1e-9);
  EXPECT_THROW(fuse_laplacian_pyramid(ImagePair(ImageGray(8, 8), ImageGray(8, 8), "p")), DimensionError);
}

TEST(ExposureWeighted, Examples) {
  const auto mid = fuse_exposure_weighted(ImagePair(ImageGray(8, 8, 0.5), ImageGray(8, 8, 0.5), "p"));
  for (double v : mid.fused.pixels()) EXPECT_DOUBLE_EQ(v, 0.5);

  Rng rng(6);
  Plane over(64, 64), mid_exposed(64, 64);
  for (std::size_t i = 0; i < over.size(); ++i) {
    const double t = rng.uniform();
    over.data[i] = 0.96 + 0.04 * t;
    mid_exposed.data[i] = 0.4 + 0.2 * t;
  }
  const ImagePair pair(ImageGray(std::move(over)), ImageGray(std::move(mid_exposed)), "exp");
  const auto f = fuse_exposure_weighted(pair);
  std::size_t close = 0;
  for (std::size_t i = 0; i < pair.b.size(); ++i) close += std::abs(f.fused.pixels()[i] - pair.b.pixels()[i]) <= 0.1;
  EXPECT_GE(close, pair.b.size() * 9 / 10);
}

TEST(Bank, IdempotenceOnIdenticalSources) {
  Rng rng(7);
  for (int t = 0; t < 10; ++t) {
    const int w = 16 + static_cast<int>(rng.index(40)), h = 16 + static_cast<int>(rng.index(40));
    const ImageGray a = t % 2 ? random_image(w, h, rng) : binary_noise(w, h, rng);
    for (const auto& c : run_bank(ImagePair(a, a, "p"), bank_algorithms()))
      EXPECT_LE(max_abs_diff(c.fused, a), 1e-6) << c.algo_id;
  }
}

TEST(Bank, RangeSafetyOnArbitraryInputs) {
  Rng rng(8);
  for (int t = 0; t < 10; ++t) {
    const int w = 16 + static_cast<int>(rng.index(40)), h = 16 + static_cast<int>(rng.index(40));
    const ImagePair pair(binary_noise(w, h, rng), random_image(w, h, rng), "p");
    for (const auto& c : run_bank(pair, bank_algorithms())) {
      ASSERT_TRUE(c.fused.same_shape(pair.a));
      for (double v : c.fused.pixels()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(Bank, RegistryBehaviour) {
  Rng rng(9);
  const ImagePair pair(random_image(32, 32, rng), random_image(32, 32, rng), "p");
  const auto all = run_bank(pair, bank_algorithms());
  ASSERT_EQ(all.size(), 5u);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < all.size(); ++i) {
    EXPECT_EQ(all[i].algo_id, bank_algorithms()[i]);
    EXPECT_FALSE(all[i].scores.has_value());
    ids.insert(all[i].algo_id);
  }
  EXPECT_EQ(ids.size(), 5u);
  EXPECT_TRUE(run_bank(pair, {}).empty());
  const auto reordered = run_bank(pair, {"lp", "avg"});
  EXPECT_EQ(reordered[0].algo_id, "lp");
  EXPECT_EQ(reordered[1].algo_id, "avg");
  EXPECT_THROW(run_bank(pair, {"avg", "nope"}), UnknownAlgorithmError);
  EXPECT_THROW(run_fuser("nope", pair), UnknownAlgorithmError);
}

TEST(Bank, Deterministic) {
  Rng rng(10);
  const ImagePair pair(random_image(32, 32, rng), random_image(32, 32, rng), "p");
  const auto x = run_bank(pair, bank_algorithms()), y = run_bank(pair, bank_algorithms());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i].fused, y[i].fused);
}
