#pragma once

// Parameter storage, initialization, forward/backward execution of an
// ArchSpec, and the "AENW" weight file.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "aefuse/arch.hpp"
#include "aefuse/errors.hpp"
#include "aefuse/layers.hpp"
#include "aefuse/random.hpp"
#include "aefuse/tensor.hpp"

namespace aefuse {

template <class T>
using BlockTensors = std::vector<Tensor4<T>>;

template <class T>
struct NetParams {
  ArchSpec spec;
  std::vector<BlockTensors<T>> blocks;  // layout per block_tensors()

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (std::size_t b = 0; b < blocks.size(); ++b)
      for (std::size_t t = 0; t < trainable_tensors(spec.blocks[b]); ++t) n += blocks[b][t].size();
    return n;
  }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks)
      for (const auto& t : b) n += t.size();
    return n;
  }

  std::vector<T> flatten_trainable() const {
    std::vector<T> out;
    out.reserve(trainable_count());
    for (std::size_t b = 0; b < blocks.size(); ++b)
      for (std::size_t t = 0; t < trainable_tensors(spec.blocks[b]); ++t)
        out.insert(out.end(), blocks[b][t].values().begin(), blocks[b][t].values().end());
    return out;
  }

  template <class U>
  NetParams<U> cast() const {
    NetParams<U> r;
    r.spec = spec;
    for (const auto& b : blocks) {
      BlockTensors<U> ts;
      for (const auto& t : b) ts.push_back(t.template cast<U>());
      r.blocks.push_back(std::move(ts));
    }
    return r;
  }

  friend bool operator==(const NetParams& a, const NetParams& b) { return a.blocks == b.blocks; }
};

/// Zero-filled tensors in the layout of `spec`.
template <class T>
std::vector<BlockTensors<T>> zero_block_tensors(const ArchSpec& spec) {
  std::vector<BlockTensors<T>> out;
  for (const auto& block : spec.blocks) {
    BlockTensors<T> ts;
    for (const auto& d : block_tensors(block)) ts.emplace_back(d.n, d.c, d.h, d.w);
    out.push_back(std::move(ts));
  }
  return out;
}

/// He-normal (fan-in) weights, zero biases, BN scale 1 / shift 0 / running
/// mean 0 / running variance 1.
template <class T = float>
NetParams<T> build_network(const ArchSpec& spec, std::uint64_t seed) {
  validate(spec);
  NetParams<T> p;
  p.spec = spec;
  p.blocks = zero_block_tensors<T>(spec);
  Rng rng(seed);
  auto he = [&](Tensor4<T>& w) {
    const double stddev = std::sqrt(2.0 / (static_cast<double>(w.c()) * w.h() * w.w()));
    for (auto& v : w.values()) v = static_cast<T>(stddev * rng.normal());
  };
  for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
    auto& ts = p.blocks[b];
    std::visit(overloaded{
                   [&](const ConvBlock&) { he(ts[0]); },
                   [&](const SeparableConv&) {
                     he(ts[0]);
                     he(ts[2]);
                   },
                   [&](const Fire&) {
                     he(ts[0]);
                     he(ts[2]);
                     he(ts[4]);
                   },
                   [&](const Inception&) {
                     for (std::size_t i = 0; i < ts.size(); i += 2) he(ts[i]);
                   },
                   [&](const BatchNorm&) {
                     ts[0].fill(T(1));
                     ts[3].fill(T(1));
                   },
                   [](const auto&) {},
               },
               spec.blocks[b]);
  }
  return p;
}

template <class T = float>
NetParams<T> build_network(const std::string& builtin_name, std::uint64_t seed, const BuiltinOptions& opt = {}) {
  return build_network<T>(builtin_spec(builtin_name, opt), seed);
}

// ---------------------------------------------------------------------------
// Execution

struct ForwardOptions {
  Mode mode = Mode::eval;
  // Multiplies the feature map entering the output stage (gamma group).
  double gamma_input_scale = 1.0;
  // Per block; frozen blocks run BN with running statistics, leave them
  // untouched and receive no parameter gradients.
  std::vector<bool> frozen;
  bool want_input_grad = false;
};

template <class T>
struct BlockCache {
  BnCache<T> bn;
  FireCache<T> fire;
  std::vector<std::size_t> argmax;
  Tensor4<T> mid;
};

template <class T>
struct ForwardTrace {
  std::vector<Tensor4<T>> acts;  // acts[0] = input, acts[i + 1] = output of block i
  std::vector<BlockCache<T>> caches;
  Tensor4<T> gamma_input;  // scaled copy, only when gamma_input_scale != 1

  const Tensor4<T>& output() const { return acts.back(); }
};

template <class T>
struct NetGrads {
  std::vector<BlockTensors<T>> blocks;
  Tensor4<T> input;
};

namespace net_detail {

inline bool is_frozen(const ForwardOptions& o, std::size_t i) { return i < o.frozen.size() && o.frozen[i]; }

template <class T>
std::span<const T> span_of(const Tensor4<T>& t) {
  return t.data();
}

template <class T>
FireWeights<T> fire_weights(const BlockTensors<T>& ts) {
  return {ts[0], ts[1], ts[2], ts[3], ts[4], ts[5]};
}

template <class T>
void check_input(const ArchSpec& spec, const Tensor4<T>& input) {
  if (input.c() != spec.in_channels)
    throw DimensionError("network '" + spec.name + "' expects " + std::to_string(spec.in_channels) +
                         " input channels, got " + std::to_string(input.c()));
  const int m = spatial_multiple(spec);
  if (input.h() % m != 0 || input.w() % m != 0)
    throw DimensionError("network '" + spec.name + "' needs spatial dims divisible by " + std::to_string(m));
  if (input.n() < 1) throw DimensionError("empty batch");
}

template <class Params, class T>
ForwardTrace<T> forward_impl(Params& params, const Tensor4<T>& input, const ForwardOptions& opt) {
  constexpr bool read_only = std::is_const_v<Params>;
  const ArchSpec& spec = params.spec;
  check_input(spec, input);
  if constexpr (read_only) {
    if (opt.mode == Mode::train) throw SpecError("train-mode forward needs mutable parameters");
  }
  const int gamma_idx = gamma_start(spec);
  ForwardTrace<T> tr;
  tr.acts.reserve(spec.blocks.size() + 1);
  tr.acts.push_back(input);
  tr.caches.resize(spec.blocks.size());
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const Tensor4<T>* xp = &tr.acts[i];
    if (static_cast<int>(i) == gamma_idx && opt.gamma_input_scale != 1.0) {
      tr.gamma_input = tr.acts[i];
      tr.gamma_input *= static_cast<T>(opt.gamma_input_scale);
      xp = &tr.gamma_input;
    }
    const Tensor4<T>& x = *xp;
    auto& ts = params.blocks[i];
    auto& cache = tr.caches[i];
    const auto source = [&](int s) -> const Tensor4<T>& { return tr.acts[static_cast<std::size_t>(s + 1)]; };
    Tensor4<T> y = std::visit(
        overloaded{
            [&](const ConvBlock& b) { return conv2d_forward(x, ts[0], ts[1], {b.stride, b.k / 2, b.groups}); },
            [&](const ChannelShuffle& b) { return channel_shuffle(x, b.groups); },
            [&](const SeparableConv& b) {
              cache.mid = conv2d_forward(x, ts[0], ts[1], {1, b.k / 2, b.cin});
              return conv2d_forward(cache.mid, ts[2], ts[3], {1, 0, 1});
            },
            [&](const Fire&) { return fire_forward(x, fire_weights(ts), &cache.fire); },
            [&](const Inception& b) {
              Tensor4<T> out;
              for (std::size_t k = 0; k < b.branches.size(); ++k) {
                Tensor4<T> br = relu_forward(conv2d_forward(x, ts[2 * k], ts[2 * k + 1], {1, b.branches[k].k / 2, 1}));
                out = k == 0 ? std::move(br) : concat_channels(out, br);
              }
              return out;
            },
            [&](const MaxPool&) {
              auto r = maxpool2_forward(x);
              cache.argmax = std::move(r.argmax);
              return std::move(r.output);
            },
            [&](const UpsampleNearest&) { return upsample_nearest(x); },
            [&](const SkipConcat& b) { return concat_channels(x, source(b.source)); },
            [&](const SkipAdd& b) {
              Tensor4<T> out = x;
              out += source(b.source);
              return out;
            },
            [&](const ReLU&) { return relu_forward(x); },
            [&](const BatchNorm&) {
              const Mode m = is_frozen(opt, i) ? Mode::eval : opt.mode;
              Tensor4<T> out = batchnorm_forward(x, span_of(ts[0]), span_of(ts[1]), span_of(ts[2]), span_of(ts[3]), m,
                                                 &cache.bn);
              if constexpr (!read_only) bn_update_running<T>(ts[2].data(), ts[3].data(), cache.bn);
              return out;
            },
            [&](const Sigmoid&) { return sigmoid_forward(x); },
        },
        spec.blocks[i]);
    tr.acts.push_back(std::move(y));
  }
  return tr;
}

}  // namespace net_detail

/// Forward pass that records everything net_backward needs. Train mode
/// updates BN running statistics of non-frozen blocks.
template <class T>
ForwardTrace<T> net_forward_trace(NetParams<T>& params, const Tensor4<T>& input, const ForwardOptions& opt = {}) {
  return net_detail::forward_impl(params, input, opt);
}

template <class T>
ForwardTrace<T> net_forward_trace(const NetParams<T>& params, const Tensor4<T>& input, const ForwardOptions& opt = {}) {
  return net_detail::forward_impl(params, input, opt);
}

/// Inference on a tensor batch (eval mode unless params are mutable and
/// opt.mode says otherwise).
template <class T>
Tensor4<T> net_forward(const NetParams<T>& params, const Tensor4<T>& input, const ForwardOptions& opt = {}) {
  return net_detail::forward_impl(params, input, opt).acts.back();
}

template <class T>
Tensor4<T> net_forward(NetParams<T>& params, const Tensor4<T>& input, const ForwardOptions& opt) {
  return net_detail::forward_impl(params, input, opt).acts.back();
}

/// Fused image of a pair: sources concatenated on the channel axis.
template <class T>
Tensor4<T> net_forward(const NetParams<T>& params, const ImagePair& pair, const ForwardOptions& opt = {}) {
  if (params.spec.in_channels != 2)
    throw DimensionError("pair input needs a 2-channel network, '" + params.spec.name + "' takes " +
                         std::to_string(params.spec.in_channels));
  return net_forward(params, pair_tensor<T>(pair), opt);
}

template <class T>
NetGrads<T> net_backward(const NetParams<T>& params, const ForwardTrace<T>& tr, const Tensor4<T>& grad_output,
                         const ForwardOptions& opt = {}) {
  const ArchSpec& spec = params.spec;
  const std::size_t nb = spec.blocks.size();
  if (!(grad_output.shape() == tr.output().shape())) throw DimensionError("net_backward: grad_output shape");
  NetGrads<T> g;
  g.blocks = zero_block_tensors<T>(spec);

  // Blocks before the first trainable one need no gradient unless the input
  // gradient was requested.
  std::size_t stop = 0;
  if (!opt.want_input_grad) {
    while (stop < nb && net_detail::is_frozen(opt, stop)) ++stop;
    if (stop == nb) return g;
  }
  const int gamma_idx = gamma_start(spec);
  std::vector<Tensor4<T>> gacts(nb + 1);
  gacts[nb] = grad_output;
  auto accumulate = [&](std::size_t slot, Tensor4<T> t) {
    if (gacts[slot].empty())
      gacts[slot] = std::move(t);
    else
      gacts[slot] += t;
  };

  for (std::size_t ii = nb; ii-- > stop;) {
    if (gacts[ii + 1].empty()) continue;
    const Tensor4<T>& go = gacts[ii + 1];
    const bool scaled = static_cast<int>(ii) == gamma_idx && opt.gamma_input_scale != 1.0;
    const Tensor4<T>& x = scaled ? tr.gamma_input : tr.acts[ii];
    const Tensor4<T>& y = tr.acts[ii + 1];
    const auto& ts = params.blocks[ii];
    const auto& cache = tr.caches[ii];
    auto& gp = g.blocks[ii];
    const bool frozen = net_detail::is_frozen(opt, ii);
    Tensor4<T> gin = std::visit(
        overloaded{
            [&](const ConvBlock& b) {
              auto r = conv2d_backward(x, ts[0], go, {b.stride, b.k / 2, b.groups});
              gp[0] = std::move(r.weights);
              gp[1] = std::move(r.bias);
              return std::move(r.input);
            },
            [&](const ChannelShuffle& b) { return channel_shuffle_backward(go, b.groups); },
            [&](const SeparableConv& b) {
              auto pw = conv2d_backward(cache.mid, ts[2], go, {1, 0, 1});
              auto dw = conv2d_backward(x, ts[0], pw.input, {1, b.k / 2, b.cin});
              gp[0] = std::move(dw.weights);
              gp[1] = std::move(dw.bias);
              gp[2] = std::move(pw.weights);
              gp[3] = std::move(pw.bias);
              return std::move(dw.input);
            },
            [&](const Fire&) {
              auto r = fire_backward(x, net_detail::fire_weights(ts), cache.fire, y, go);
              gp = {std::move(r.weights.squeeze_w), std::move(r.weights.squeeze_b), std::move(r.weights.expand1_w),
                    std::move(r.weights.expand1_b), std::move(r.weights.expand3_w), std::move(r.weights.expand3_b)};
              return std::move(r.input);
            },
            [&](const Inception& b) {
              Tensor4<T> acc(x.shape());
              int c0 = 0;
              for (std::size_t k = 0; k < b.branches.size(); ++k) {
                const int wdt = b.branches[k].width;
                Tensor4<T> gb = relu_backward(slice_channels(y, c0, wdt), slice_channels(go, c0, wdt));
                auto r = conv2d_backward(x, ts[2 * k], gb, {1, b.branches[k].k / 2, 1});
                gp[2 * k] = std::move(r.weights);
                gp[2 * k + 1] = std::move(r.bias);
                acc += r.input;
                c0 += wdt;
              }
              return acc;
            },
            [&](const MaxPool&) { return maxpool2_backward(x.shape(), cache.argmax, go); },
            [&](const UpsampleNearest&) { return upsample_nearest_backward(go); },
            [&](const SkipConcat& b) {
              accumulate(static_cast<std::size_t>(b.source + 1), slice_channels(go, x.c(), go.c() - x.c()));
              return slice_channels(go, 0, x.c());
            },
            [&](const SkipAdd& b) {
              accumulate(static_cast<std::size_t>(b.source + 1), go);
              return go;
            },
            [&](const ReLU&) { return relu_backward(y, go); },
            [&](const BatchNorm&) {
              auto r = batchnorm_backward(go, net_detail::span_of(ts[0]), cache.bn);
              std::copy(r.scale.begin(), r.scale.end(), gp[0].values().begin());
              std::copy(r.shift.begin(), r.shift.end(), gp[1].values().begin());
              return std::move(r.input);
            },
            [&](const Sigmoid&) { return sigmoid_backward(y, go); },
        },
        spec.blocks[ii]);
    if (frozen)
      for (auto& t : gp) t.fill(T(0));
    if (scaled) gin *= static_cast<T>(opt.gamma_input_scale);
    accumulate(ii, std::move(gin));
  }
  if (opt.want_input_grad) g.input = gacts[0].empty() ? Tensor4<T>(tr.acts[0].shape()) : std::move(gacts[0]);
  return g;
}

// ---------------------------------------------------------------------------
// Weight file: "AENW", u32 version, u32 name length, name bytes, u32 value
// count, then every tensor (trainable and buffers, block order) as f32 LE.

inline constexpr std::uint32_t kWeightsVersion = 1;

inline std::size_t weights_header_bytes(const ArchSpec& spec) { return 16 + spec.name.size(); }

inline std::size_t weights_file_bytes(const ArchSpec& spec) {
  return weights_header_bytes(spec) + 4 * (count_params(spec) + count_buffers(spec));
}

namespace weights_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw TruncationError("weight file truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace weights_detail

inline std::string encode_weights(const NetParams<float>& params) {
  std::string out = "AENW";
  weights_detail::put_u32(out, kWeightsVersion);
  weights_detail::put_u32(out, static_cast<std::uint32_t>(params.spec.name.size()));
  out += params.spec.name;
  weights_detail::put_u32(out, static_cast<std::uint32_t>(params.total_count()));
  for (const auto& b : params.blocks)
    for (const auto& t : b)
      for (float v : t.values()) weights_detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

/// Name stored in a weight blob, without decoding the values.
inline std::string weights_spec_name(std::string_view in) {
  if (in.size() < 4 || in.substr(0, 4) != "AENW") throw FormatError("not an AENW weight file");
  std::size_t pos = 4;
  if (weights_detail::get_u32(in, pos) != kWeightsVersion) throw FormatError("unsupported weight file version");
  const auto len = weights_detail::get_u32(in, pos);
  if (pos + len > in.size()) throw TruncationError("weight file truncated in header");
  return std::string(in.substr(pos, len));
}

inline NetParams<float> decode_weights(std::string_view in, const ArchSpec& spec) {
  const std::string name = weights_spec_name(in);
  std::size_t pos = 12 + name.size();
  NetParams<float> p;
  p.spec = spec;
  p.blocks = zero_block_tensors<float>(spec);
  const auto count = weights_detail::get_u32(in, pos);
  if (count != p.total_count())
    throw FormatError("weight file holds " + std::to_string(count) + " values, spec '" + spec.name + "' needs " +
                      std::to_string(p.total_count()));
  if (in.size() - pos < 4 * static_cast<std::size_t>(count)) throw TruncationError("weight file truncated");
  for (auto& b : p.blocks)
    for (auto& t : b)
      for (float& v : t.values()) v = std::bit_cast<float>(weights_detail::get_u32(in, pos));
  if (pos != in.size()) throw FormatError("trailing bytes in weight file");
  return p;
}

inline void save_weights(const NetParams<float>& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  const std::string bytes = encode_weights(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline NetParams<float> load_weights(const std::filesystem::path& path, const ArchSpec& spec) {
  return decode_weights(detail::read_file(path), spec);
}

/// Resolves the stored name against the built-in architectures.
inline NetParams<float> load_weights(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  return decode_weights(bytes, builtin_spec(weights_spec_name(bytes)));
}

}  // namespace aefuse
