#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "aefuse/network.hpp"
#include "aefuse/random.hpp"
#include "oracles.hpp"

using namespace aefuse;
namespace fs = std::filesystem;
using T4 = Tensor4<double>;

namespace {

T4 random_input(int n, int c, int h, int w, Rng& rng) {
  T4 t(n, c, h, w);
  for (auto& v : t.values()) v = rng.uniform();
  return t;
}

// Perturbs every trainable value (and BN scales away from 1) so gradient
// checks see a generic point rather than the initializer's zero biases.
NetParams<double> jitter(NetParams<double> p, Rng& rng) {
  for (std::size_t b = 0; b < p.blocks.size(); ++b)
    for (std::size_t t = 0; t < trainable_tensors(p.spec.blocks[b]); ++t)
      for (auto& v : p.blocks[b][t].values()) v += 0.1 * (2 * rng.uniform() - 1);
  return p;
}

}  // namespace

TEST(Counts, AllBuiltinsMatchHandArithmetic) {
  for (const auto& name : builtin_spec_names()) {
    const ArchSpec spec = builtin_spec(name);
    ASSERT_TRUE(oracle::builtin_param_counts().count(name)) << name;
    EXPECT_EQ(count_params(spec), oracle::builtin_param_counts().at(name)) << name;
    EXPECT_EQ(build_network<float>(spec, 1).flatten_trainable().size(), count_params(spec)) << name;
  }
  EXPECT_EQ(count_params(builtin_spec("gcb")), 6721u);
  EXPECT_EQ(count_buffers(builtin_spec("gcb")), 256u);
}

TEST(Counts, SixChannelStemIs3520) {
  BuiltinOptions opt;
  opt.in_channels = 6;
  const ArchSpec spec = builtin_spec("gcb", opt);
  const auto t = block_tensors(spec.blocks[0]);
  EXPECT_EQ(t[0].size() + t[1].size(), 3520u);
  EXPECT_EQ(count_params(spec), oracle::builtin_param_counts().at("gcb") + 3520u - (2 * 64 * 9 + 64));
}

TEST(Counts, GcbIsSmallestNonPooledAndNearReference) {
  const std::size_t gcb_bytes = weights_file_bytes(builtin_spec("gcb"));
  for (const auto& name : builtin_spec_names()) {
    const ArchSpec s = builtin_spec(name);
    if (is_pooled(s) || name == "gcb") continue;
    EXPECT_LT(gcb_bytes, weights_file_bytes(s)) << name;
  }
  const double ratio = static_cast<double>(count_params(builtin_spec("gcb"))) / 5378.0;
  EXPECT_GE(ratio, 0.5);
  EXPECT_LE(ratio, 2.0);
  EXPECT_GT(gcb_bytes, 10'000u);
  EXPECT_LT(gcb_bytes, 100'000u);
}

TEST(Counts, Flops) {
  EXPECT_EQ(count_flops(parse_arch("in 1\nconv 1 1 1"), 1, 1), 2u);
  // gcb at 400x400: C1 2*64*9, GC 64*8*9, C2 64*9 MACs per pixel
  EXPECT_EQ(count_flops(builtin_spec("gcb"), 400, 400), 2ull * (2 * 64 * 9 + 64 * 8 * 9 + 64 * 9) * 400 * 400);
  EXPECT_THROW(count_flops(builtin_spec("m"), 6, 6), DimensionError);
}

TEST(Spec, TextRoundTripAndErrors) {
  for (const auto& name : builtin_spec_names()) {
    const ArchSpec s = builtin_spec(name);
    const ArchSpec back = parse_arch(to_text(s));
    EXPECT_EQ(back.name, name);
    EXPECT_EQ(to_text(back), to_text(s));
    EXPECT_EQ(count_params(back), count_params(s));
  }
  EXPECT_THROW(parse_arch("conv 2 4 3\nfoo 1\n"), ParseError);
  EXPECT_THROW(parse_arch("conv 2 x 3\n"), ParseError);
  EXPECT_THROW(parse_arch("conv 2 4\n"), ParseError);
  EXPECT_THROW(parse_arch("in 2\nconv 2 4 3\nconv 5 1 3\n"), SpecError);
  EXPECT_THROW(parse_arch("in 2\nconv 2 6 3 4\n"), SpecError);
  EXPECT_THROW(builtin_spec("bogus"), SpecError);
  const ArchSpec c = parse_arch("# tiny\nname tiny\nin 2\nconv 2 4 3 2 # grouped\nrelu\nconv 4 1 1\nsigmoid\n");
  EXPECT_EQ(c.name, "tiny");
  EXPECT_EQ(count_params(c), (2 * 4 * 9 / 2 + 4) + (4 + 1));
}

TEST(Build, DeterministicPerSeed) {
  EXPECT_EQ(build_network<float>("gcb", 5), build_network<float>("gcb", 5));
  EXPECT_FALSE(build_network<float>("gcb", 5) == build_network<float>("gcb", 6));
  const auto p = build_network<float>("gcb", 5);
  for (std::size_t b = 0; b < p.blocks.size(); ++b)
    if (std::holds_alternative<BatchNorm>(p.spec.blocks[b])) {
      for (float v : p.blocks[b][0].values()) EXPECT_EQ(v, 1.0f);
      for (float v : p.blocks[b][3].values()) EXPECT_GT(v, 0.0f);
    }
}

TEST(Weights, RoundTripAndSize) {
  const fs::path dir = fs::temp_directory_path() / "aefuse_weights_test";
  fs::create_directories(dir);
  for (const auto& name : builtin_spec_names()) {
    const auto p = build_network<float>(name, 3);
    const fs::path file = dir / (name + ".aenw");
    save_weights(p, file);
    EXPECT_EQ(fs::file_size(file), weights_file_bytes(p.spec)) << name;
    EXPECT_EQ(fs::file_size(file), 4 * (count_params(p.spec) + count_buffers(p.spec)) + 16 + name.size());
    EXPECT_EQ(load_weights(file), p) << name;
    EXPECT_EQ(load_weights(file, p.spec), p) << name;
  }
  EXPECT_EQ(fs::file_size(dir / "gcb.aenw"), 27927u);
  fs::remove_all(dir);
}

TEST(Weights, Errors) {
  const auto p = build_network<float>("gcb", 3);
  const std::string bytes = encode_weights(p);
  EXPECT_THROW(decode_weights("XENW" + bytes.substr(4), p.spec), FormatError);
  EXPECT_THROW(decode_weights(bytes.substr(0, bytes.size() - 1), p.spec), TruncationError);
  EXPECT_THROW(decode_weights(bytes.substr(0, 10), p.spec), TruncationError);
  EXPECT_THROW(decode_weights(bytes + "x", p.spec), FormatError);
  EXPECT_THROW(decode_weights(bytes, builtin_spec("regular")), FormatError);
  std::string bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode_weights(bad_version, p.spec), FormatError);
  EXPECT_THROW(load_weights(fs::temp_directory_path() / "aefuse_missing.aenw"), IoError);
}

TEST(Forward, ZeroGammaGivesHalf) {
  auto p = build_network<float>("gcb", 1);
  const int c2 = gamma_start(p.spec);
  for (auto& t : p.blocks[static_cast<std::size_t>(c2)]) t.fill(0.0f);
  Rng rng(2);
  const ImagePair pair(random_image(16, 12, rng), random_image(16, 12, rng), "p");
  const auto y = net_forward(p, pair);
  ASSERT_EQ(y.shape(), (Shape4{1, 1, 12, 16}));
  for (float v : y.values()) EXPECT_EQ(v, 0.5f);
}

TEST(Forward, ShapeAndRangeForEverySpec) {
  Rng rng(3);
  const ImagePair pair(random_image(12, 8, rng), random_image(12, 8, rng), "p");
  for (const auto& name : builtin_spec_names()) {
    const auto p = build_network<float>(name, 4);
    const auto y = net_forward(p, pair);
    EXPECT_EQ(y.shape(), (Shape4{1, 1, 8, 12})) << name;
    for (float v : y.values()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  const auto m = build_network<float>("m", 1);
  EXPECT_THROW(net_forward(m, ImagePair(ImageGray(10, 8), ImageGray(10, 8), "p")), DimensionError);
  EXPECT_THROW(net_forward(m, Tensor4<float>(1, 3, 8, 8)), DimensionError);
  EXPECT_THROW(net_forward(build_network<float>("gcb", 1, BuiltinOptions{6, 64, 8}), pair), DimensionError);
}

TEST(Forward, GcbMatchesLayerByLayerOracle) {
  Rng rng(4);
  BuiltinOptions opt;
  opt.width = 16;
  opt.gc_groups = 4;
  NetParams<double> p = jitter(build_network<double>("gcb", 9, opt), rng);
  // non-trivial running statistics
  for (std::size_t b = 0; b < p.blocks.size(); ++b)
    if (std::holds_alternative<BatchNorm>(p.spec.blocks[b]))
      for (auto& v : p.blocks[b][2].values()) v = rng.uniform(-0.2, 0.2);
  const T4 x = random_input(1, 2, 7, 9, rng);

  auto bn_eval = [&](T4 t, std::size_t b) {
    const auto& ts = p.blocks[b];
    for (int c = 0; c < t.c(); ++c)
      for (int i = 0; i < t.h() * t.w(); ++i) {
        double& v = t.plane(0, c)[i];
        v = ts[0][c] * (v - ts[2][c]) / std::sqrt(ts[3][c] + 1e-5) + ts[1][c];
      }
    return t;
  };
  auto shuffle = [](const T4& t, int g) {
    T4 out(t.shape());
    const int per = t.c() / g;
    for (int k = 0; k < t.c(); ++k) {
      const int src = (k % g) * per + k / g;
      std::copy_n(t.plane(0, src), t.h() * t.w(), out.plane(0, k));
    }
    return out;
  };
  // C1, BN, ReLU | GC, shuffle, BN, ReLU | add C1 | C2 | sigmoid
  const T4 c1 = oracle::relu(bn_eval(oracle::conv2d(x, p.blocks[0][0], p.blocks[0][1], 1, 1, 1), 1));
  const T4 gc = oracle::relu(bn_eval(shuffle(oracle::conv2d(c1, p.blocks[3][0], p.blocks[3][1], 1, 1, 4), 4), 5));
  T4 sum = gc;
  sum += c1;
  T4 want = oracle::conv2d(sum, p.blocks[8][0], p.blocks[8][1], 1, 1, 1);
  for (auto& v : want.values()) v = 1 / (1 + std::exp(-v));

  ASSERT_TRUE(std::holds_alternative<SkipAdd>(p.spec.blocks[7]));
  const T4 got = net_forward(p, x);
  EXPECT_LE(oracle::relative_error(got.values(), want.values()), 1e-12);
}

TEST(Forward, BatchIndependentInEvalMode) {
  Rng rng(5);
  for (const auto& name : {"gcb", "squeeze", "m"}) {
    const auto p = build_network<float>(name, 7);
    std::vector<Tensor4<float>> samples;
    for (int i = 0; i < 3; ++i) samples.push_back(random_input(1, 2, 8, 8, rng).cast<float>());
    const auto batch = net_forward(p, stack_batch(samples));
    for (int i = 0; i < 3; ++i) {
      const auto single = net_forward(p, samples[static_cast<std::size_t>(i)]);
      EXPECT_EQ(slice_batch(batch, i), single) << name;
    }
    EXPECT_EQ(net_forward(p, stack_batch(samples)), batch);
  }
}

TEST(Forward, TrainModeUpdatesRunningStatsOnlyWhenMutable) {
  Rng rng(6);
  auto p = build_network<float>("gcb", 2);
  const auto before = p;
  const auto x = random_input(2, 2, 8, 8, rng).cast<float>();
  ForwardOptions train;
  train.mode = Mode::train;
  EXPECT_THROW(net_forward(static_cast<const NetParams<float>&>(p), x, train), SpecError);
  net_forward(p, x, train);
  EXPECT_FALSE(p == before);
  EXPECT_EQ(p.flatten_trainable(), before.flatten_trainable());
}

// ---------------------------------------------------------------------------
// Whole-network gradients

namespace {

constexpr double kStep = 1e-6;

// Relative error with a floor on the denominator: a conv bias feeding a
// train-mode BN has an exactly zero gradient, and comparing rounding noise
// against rounding noise says nothing.
double grad_error(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max(std::sqrt(std::max(na, nb)), 1e-5);
}

struct GradCheck {
  double worst = 0;
  std::string where;
};

GradCheck check_network(const NetParams<double>& params, const T4& x, const ForwardOptions& opt, Rng& rng) {
  NetParams<double> work = params;
  const auto tr = net_forward_trace(work, x, opt);
  const T4 probe = oracle::random_tensor<double>(tr.output().n(), 1, tr.output().h(), tr.output().w(), rng);
  ForwardOptions gopt = opt;
  gopt.want_input_grad = true;
  const NetGrads<double> g = net_backward(params, tr, probe, gopt);

  auto loss = [&](const NetParams<double>& p, const T4& in) {
    NetParams<double> q = p;
    return oracle::dot(net_forward(q, in, opt), probe);
  };
  GradCheck out;
  const auto fx = oracle::numeric_grad([&](const T4& v) { return loss(params, v); }, x, kStep);
  out.worst = grad_error(g.input.values(), fx);
  out.where = "input";
  for (std::size_t b = 0; b < params.blocks.size(); ++b)
    for (std::size_t t = 0; t < trainable_tensors(params.spec.blocks[b]); ++t) {
      const auto fd = oracle::numeric_grad(
          [&](const T4& v) {
            NetParams<double> q = params;
            q.blocks[b][t] = v;
            return loss(q, x);
          },
          params.blocks[b][t], kStep);
      const double e = grad_error(g.blocks[b][t].values(), fd);
      if (e > out.worst) {
        out.worst = e;
        out.where = "block " + std::to_string(b) + " tensor " + std::to_string(t);
      }
    }
  return out;
}

}  // namespace

TEST(Backward, EveryBuiltinEvalMode) {
  Rng rng(7);
  BuiltinOptions opt;
  opt.width = 8;
  opt.gc_groups = 2;
  for (const auto& name : builtin_spec_names()) {
    const NetParams<double> p = jitter(build_network<double>(name, 11, opt), rng);
    const T4 x = random_input(1, 2, 8, 8, rng);
    const GradCheck r = check_network(p, x, {}, rng);
    EXPECT_LE(r.worst, 1e-3) << name << " at " << r.where;
  }
}

TEST(Backward, TrainModeWithBatch) {
  Rng rng(8);
  BuiltinOptions opt;
  opt.width = 8;
  opt.gc_groups = 2;
  for (const auto& name : {"gcb", "squeeze", "m"}) {
    const NetParams<double> p = jitter(build_network<double>(name, 12, opt), rng);
    const T4 x = random_input(2, 2, 8, 8, rng);
    ForwardOptions train;
    train.mode = Mode::train;
    const GradCheck r = check_network(p, x, train, rng);
    EXPECT_LE(r.worst, 1e-3) << name << " at " << r.where;
  }
}

TEST(Backward, FrozenBlocksAndGammaScale) {
  Rng rng(9);
  BuiltinOptions bo;
  bo.width = 8;
  bo.gc_groups = 2;
  const NetParams<double> p = jitter(build_network<double>("gcb", 13, bo), rng);
  const T4 x = random_input(1, 2, 6, 6, rng);
  ForwardOptions opt;
  opt.gamma_input_scale = 0.3;
  opt.frozen.assign(p.spec.blocks.size(), false);
  const int gs = gamma_start(p.spec);
  for (int b = 0; b < gs; ++b) opt.frozen[static_cast<std::size_t>(b)] = true;

  NetParams<double> work = p;
  const auto tr = net_forward_trace(work, x, opt);
  const T4 probe = oracle::random_tensor<double>(1, 1, 6, 6, rng);
  const auto g = net_backward(p, tr, probe, opt);
  for (int b = 0; b < gs; ++b)
    for (const auto& t : g.blocks[static_cast<std::size_t>(b)])
      for (double v : t.values()) EXPECT_EQ(v, 0.0);
  const auto fd = oracle::numeric_grad(
      [&](const T4& v) {
        NetParams<double> q = p;
        q.blocks[static_cast<std::size_t>(gs)][0] = v;
        return oracle::dot(net_forward(q, x, opt), probe);
      },
      p.blocks[static_cast<std::size_t>(gs)][0], kStep);
  EXPECT_LE(oracle::relative_error(g.blocks[static_cast<std::size_t>(gs)][0].values(), fd), 1e-3);

  // scale 0 removes the learned features from the output stage entirely
  ForwardOptions zero = opt;
  zero.gamma_input_scale = 0.0;
  auto q = p;
  const auto y0 = net_forward(q, x, zero);
  auto bias_only = p;
  for (auto& v : bias_only.blocks[static_cast<std::size_t>(gs)][0].values()) v = 0.0;
  const auto yb = net_forward(bias_only, x, ForwardOptions{});
  EXPECT_LE(oracle::relative_error(y0.values(), yb.values()), 1e-12);
}
