#pragma once

// Declarative micro-CNN architectures: block descriptors, the built-in
// variants, the one-block-per-line text format and analytic cost counting.

#include <cstdint>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "aefuse/errors.hpp"

namespace aefuse {

struct ConvBlock {
  int cin = 0, cout = 0, k = 3, groups = 1, stride = 1;
};
struct ChannelShuffle {
  int groups = 1;
};
// Depthwise k x k (groups = cin) followed by a pointwise 1x1.
struct SeparableConv {
  int cin = 0, cout = 0, k = 3;
};
// Output channels: 2 * expand (1x1 branch then 3x3 branch).
struct Fire {
  int cin = 0, squeeze = 0, expand = 0;
};
struct InceptionBranch {
  int k = 1, width = 0;
};
// Parallel k x k convolutions (each followed by ReLU), concatenated.
struct Inception {
  int cin = 0;
  std::vector<InceptionBranch> branches;
};
struct MaxPool {};
struct UpsampleNearest {};
// source: index of an earlier block whose output joins this one; -1 is the
// network input.
struct SkipConcat {
  int source = -1;
};
struct SkipAdd {
  int source = -1;
};
struct ReLU {};
struct BatchNorm {
  int channels = 0;
};
struct Sigmoid {};

using Block = std::variant<ConvBlock, ChannelShuffle, SeparableConv, Fire, Inception, MaxPool, UpsampleNearest,
                           SkipConcat, SkipAdd, ReLU, BatchNorm, Sigmoid>;

struct ArchSpec {
  std::string name;
  int in_channels = 2;
  int out_channels = 1;
  std::vector<Block> blocks;
};

// Weight groups of the fused-image map: alpha = first conv stage, beta = the
// replaceable middle, gamma = the output stage.
enum class ParamGroup { alpha, beta, gamma };

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// ---------------------------------------------------------------------------
// Validation

struct BlockShape {
  int channels = 0;
  int level = 0;  // number of net 2x downsamplings relative to the input
};

/// Static channel / resolution propagation. Throws SpecError on any
/// inconsistency.
inline std::vector<BlockShape> infer_shapes(const ArchSpec& spec) {
  if (spec.in_channels < 1) throw SpecError("spec '" + spec.name + "': in_channels must be >= 1");
  if (spec.blocks.empty()) throw SpecError("spec '" + spec.name + "': no blocks");
  std::vector<BlockShape> out;
  BlockShape cur{spec.in_channels, 0};
  auto source_shape = [&](int src, std::size_t i) -> BlockShape {
    if (src < -1 || src >= static_cast<int>(i))
      throw SpecError("block " + std::to_string(i) + ": skip source must reference an earlier block");
    return src == -1 ? BlockShape{spec.in_channels, 0} : out[static_cast<std::size_t>(src)];
  };
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const std::string where = "spec '" + spec.name + "' block " + std::to_string(i) + ": ";
    std::visit(overloaded{
                   [&](const ConvBlock& b) {
                     if (b.cin != cur.channels) throw SpecError(where + "conv expects " + std::to_string(b.cin) + " channels, gets " + std::to_string(cur.channels));
                     if (b.cout < 1 || b.k < 1 || b.k % 2 == 0) throw SpecError(where + "conv needs cout >= 1 and odd k");
                     if (b.groups < 1 || b.cin % b.groups || b.cout % b.groups) throw SpecError(where + "groups must divide cin and cout");
                     if (b.stride != 1 && b.stride != 2) throw SpecError(where + "stride must be 1 or 2");
                     cur.channels = b.cout;
                     if (b.stride == 2) ++cur.level;
                   },
                   [&](const ChannelShuffle& b) {
                     if (b.groups < 1 || cur.channels % b.groups) throw SpecError(where + "shuffle groups must divide channels");
                   },
                   [&](const SeparableConv& b) {
                     if (b.cin != cur.channels) throw SpecError(where + "separable conv input channel mismatch");
                     if (b.cout < 1 || b.k < 1 || b.k % 2 == 0) throw SpecError(where + "separable conv needs cout >= 1 and odd k");
                     cur.channels = b.cout;
                   },
                   [&](const Fire& b) {
                     if (b.cin != cur.channels) throw SpecError(where + "fire input channel mismatch");
                     if (b.squeeze < 1 || b.expand < 1 || b.squeeze >= 2 * b.expand) throw SpecError(where + "fire needs 1 <= squeeze < 2*expand");
                     cur.channels = 2 * b.expand;
                   },
                   [&](const Inception& b) {
                     if (b.cin != cur.channels) throw SpecError(where + "inception input channel mismatch");
                     if (b.branches.empty()) throw SpecError(where + "inception needs at least one branch");
                     int total = 0;
                     for (const auto& br : b.branches) {
                       if (br.width < 1 || br.k < 1 || br.k % 2 == 0) throw SpecError(where + "inception branch needs width >= 1 and odd k");
                       total += br.width;
                     }
                     cur.channels = total;
                   },
                   [&](const MaxPool&) { ++cur.level; },
                   [&](const UpsampleNearest&) { --cur.level; },
                   [&](const SkipConcat& b) {
                     const BlockShape s = source_shape(b.source, i);
                     if (s.level != cur.level) throw SpecError(where + "concat source resolution differs");
                     cur.channels += s.channels;
                   },
                   [&](const SkipAdd& b) {
                     const BlockShape s = source_shape(b.source, i);
                     if (s.level != cur.level || s.channels != cur.channels) throw SpecError(where + "add source shape differs");
                   },
                   [&](const ReLU&) {},
                   [&](const BatchNorm& b) {
                     if (b.channels != cur.channels) throw SpecError(where + "batchnorm channel mismatch");
                   },
                   [&](const Sigmoid&) {},
               },
               spec.blocks[i]);
    out.push_back(cur);
  }
  if (cur.channels != spec.out_channels)
    throw SpecError("spec '" + spec.name + "': final block yields " + std::to_string(cur.channels) +
                    " channels, expected " + std::to_string(spec.out_channels));
  if (cur.level != 0) throw SpecError("spec '" + spec.name + "': output resolution differs from input");
  return out;
}

inline void validate(const ArchSpec& spec) { (void)infer_shapes(spec); }

/// Input side must be divisible by this for every pool to see even dims.
inline int spatial_multiple(const ArchSpec& spec) {
  int level = 0, worst = 0;
  for (const auto& b : spec.blocks) {
    if (std::holds_alternative<MaxPool>(b) ||
        (std::holds_alternative<ConvBlock>(b) && std::get<ConvBlock>(b).stride == 2))
      worst = std::max(worst, ++level);
    else if (std::holds_alternative<UpsampleNearest>(b))
      --level;
  }
  return 1 << worst;
}

inline bool is_pooled(const ArchSpec& spec) { return spatial_multiple(spec) > 1; }

inline std::vector<int> conv_block_indices(const ArchSpec& spec) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i)
    if (std::holds_alternative<ConvBlock>(spec.blocks[i])) idx.push_back(static_cast<int>(i));
  return idx;
}

/// alpha: the first conv and the BN/ReLU blocks directly after it.
/// gamma: the last conv and everything after it. beta: the rest.
inline std::vector<ParamGroup> param_groups(const ArchSpec& spec) {
  const auto convs = conv_block_indices(spec);
  if (convs.size() < 2) throw SpecError("spec '" + spec.name + "' needs at least two conv blocks");
  const int first = convs.front(), last = convs.back();
  std::size_t alpha_end = static_cast<std::size_t>(first) + 1;
  while (alpha_end < spec.blocks.size() && (std::holds_alternative<BatchNorm>(spec.blocks[alpha_end]) ||
                                            std::holds_alternative<ReLU>(spec.blocks[alpha_end])))
    ++alpha_end;
  std::vector<ParamGroup> g(spec.blocks.size(), ParamGroup::beta);
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    if (static_cast<int>(i) >= last)
      g[i] = ParamGroup::gamma;
    else if (i < alpha_end)
      g[i] = ParamGroup::alpha;
  }
  return g;
}

inline int gamma_start(const ArchSpec& spec) { return conv_block_indices(spec).back(); }

// ---------------------------------------------------------------------------
// Parameter layout: one list of tensors per block. The first
// `trainable_tensors` entries are optimized; the rest are buffers.

struct TensorDecl {
  int n, c, h, w;
  std::size_t size() const { return static_cast<std::size_t>(n) * c * h * w; }
};

inline std::vector<TensorDecl> block_tensors(const Block& block) {
  return std::visit(overloaded{
                        [](const ConvBlock& b) -> std::vector<TensorDecl> {
                          return {{b.cout, b.cin / b.groups, b.k, b.k}, {b.cout, 1, 1, 1}};
                        },
                        [](const SeparableConv& b) -> std::vector<TensorDecl> {
                          return {{b.cin, 1, b.k, b.k}, {b.cin, 1, 1, 1}, {b.cout, b.cin, 1, 1}, {b.cout, 1, 1, 1}};
                        },
                        [](const Fire& b) -> std::vector<TensorDecl> {
                          return {{b.squeeze, b.cin, 1, 1}, {b.squeeze, 1, 1, 1}, {b.expand, b.squeeze, 1, 1},
                                  {b.expand, 1, 1, 1},       {b.expand, b.squeeze, 3, 3}, {b.expand, 1, 1, 1}};
                        },
                        [](const Inception& b) -> std::vector<TensorDecl> {
                          std::vector<TensorDecl> t;
                          for (const auto& br : b.branches) {
                            t.push_back({br.width, b.cin, br.k, br.k});
                            t.push_back({br.width, 1, 1, 1});
                          }
                          return t;
                        },
                        [](const BatchNorm& b) -> std::vector<TensorDecl> {
                          return {{b.channels, 1, 1, 1}, {b.channels, 1, 1, 1}, {b.channels, 1, 1, 1}, {b.channels, 1, 1, 1}};
                        },
                        [](const auto&) -> std::vector<TensorDecl> { return {}; },
                    },
                    block);
}

inline std::size_t trainable_tensors(const Block& block) {
  if (std::holds_alternative<BatchNorm>(block)) return 2;
  return block_tensors(block).size();
}

/// Trainable parameter count (conv weights + biases, BN scale + shift).
inline std::size_t count_params(const ArchSpec& spec) {
  validate(spec);
  std::size_t total = 0;
  for (const auto& b : spec.blocks) {
    const auto t = block_tensors(b);
    for (std::size_t i = 0; i < trainable_tensors(b); ++i) total += t[i].size();
  }
  return total;
}

/// Non-trainable buffers (BN running mean and variance).
inline std::size_t count_buffers(const ArchSpec& spec) {
  validate(spec);
  std::size_t total = 0;
  for (const auto& b : spec.blocks) {
    const auto t = block_tensors(b);
    for (std::size_t i = trainable_tensors(b); i < t.size(); ++i) total += t[i].size();
  }
  return total;
}

/// FLOPs at an explicit input size with 1 multiply-accumulate = 2 FLOPs.
/// Pooling, shuffles, activations, normalization and skips count as zero.
inline std::uint64_t count_flops(const ArchSpec& spec, int h, int w) {
  validate(spec);
  std::vector<std::pair<int, int>> dims;  // per-block output (h, w)
  const auto src_dims = [&](int s) { return s == -1 ? std::pair{h, w} : dims[static_cast<std::size_t>(s)]; };
  int ch = h, cw = w;
  std::uint64_t macs = 0;
  const auto px = [&] { return static_cast<std::uint64_t>(ch) * static_cast<std::uint64_t>(cw); };
  for (const auto& block : spec.blocks) {
    std::visit(overloaded{
                   [&](const ConvBlock& b) {
                     ch = (ch + 2 * (b.k / 2) - b.k) / b.stride + 1;
                     cw = (cw + 2 * (b.k / 2) - b.k) / b.stride + 1;
                     macs += static_cast<std::uint64_t>(b.cout) * (b.cin / b.groups) * b.k * b.k * px();
                   },
                   [&](const SeparableConv& b) {
                     macs += (static_cast<std::uint64_t>(b.cin) * b.k * b.k + static_cast<std::uint64_t>(b.cin) * b.cout) * px();
                   },
                   [&](const Fire& b) {
                     macs += (static_cast<std::uint64_t>(b.cin) * b.squeeze + static_cast<std::uint64_t>(b.squeeze) * b.expand +
                              static_cast<std::uint64_t>(b.squeeze) * b.expand * 9) *
                             px();
                   },
                   [&](const Inception& b) {
                     for (const auto& br : b.branches)
                       macs += static_cast<std::uint64_t>(b.cin) * br.width * br.k * br.k * px();
                   },
                   [&](const MaxPool&) {
                     if (ch % 2 || cw % 2) throw DimensionError("count_flops: pooling an odd-sized map");
                     ch /= 2;
                     cw /= 2;
                   },
                   [&](const UpsampleNearest&) {
                     ch *= 2;
                     cw *= 2;
                   },
                   [&](const SkipConcat& b) {
                     if (src_dims(b.source) != std::pair{ch, cw}) throw DimensionError("count_flops: concat size mismatch");
                   },
                   [&](const SkipAdd& b) {
                     if (src_dims(b.source) != std::pair{ch, cw}) throw DimensionError("count_flops: add size mismatch");
                   },
                   [&](const auto&) {},
               },
               block);
    dims.emplace_back(ch, cw);
  }
  return 2 * macs;
}

// ---------------------------------------------------------------------------
// Built-in variants

struct BuiltinOptions {
  int in_channels = 2;
  int width = 64;      // feature channels of the C1 / replaceable stage
  int gc_groups = 8;   // group count of the grouped convolution
};

inline std::vector<std::string> builtin_spec_names() {
  return {"regular", "gcb", "separable", "squeeze", "inception", "gcb_inception", "squeeze_gcb", "squeeze2_gcb", "m"};
}

namespace arch_detail {

inline void append(std::vector<Block>& v, std::initializer_list<Block> more) { v.insert(v.end(), more); }

inline void grouped_stage(std::vector<Block>& b, int width, int groups) {
  append(b, {ConvBlock{width, width, 3, groups, 1}, ChannelShuffle{groups}, BatchNorm{width}, ReLU{}});
}

}  // namespace arch_detail

/// C1 (conv + BN + ReLU) -> replaceable module -> identity skip from C1 ->
/// C2 (conv to one channel) -> sigmoid. "m" is the pooled U-Net variant.
inline ArchSpec builtin_spec(const std::string& name, const BuiltinOptions& opt = {}) {
  using arch_detail::append;
  const int w = opt.width, g = opt.gc_groups;
  ArchSpec s;
  s.name = name;
  s.in_channels = opt.in_channels;
  s.out_channels = 1;
  auto& b = s.blocks;

  if (name == "m") {
    const int h = w / 2;  // 32 at the default width
    append(b, {ConvBlock{opt.in_channels, h, 3, 1, 1}, BatchNorm{h}, ReLU{},  // 0-2
               MaxPool{},                                                     // 3
               Fire{h, h / 4, h / 2},                                         // 4
               MaxPool{},                                                     // 5
               Fire{h, h / 4, h / 2},                                         // 6 bottleneck
               UpsampleNearest{},                                             // 7
               SkipConcat{4},                                                 // 8
               ConvBlock{2 * h, h, 3, 1, 1}, BatchNorm{h}, ReLU{},            // 9-11
               UpsampleNearest{},                                             // 12
               SkipConcat{2},                                                 // 13
               ConvBlock{2 * h, 1, 3, 1, 1}, Sigmoid{}});                     // 14-15
    validate(s);
    return s;
  }

  append(b, {ConvBlock{opt.in_channels, w, 3, 1, 1}, BatchNorm{w}, ReLU{}});
  constexpr int c1_out = 2;
  if (name == "regular") {
    append(b, {ConvBlock{w, w, 3, 1, 1}, BatchNorm{w}, ReLU{}});
  } else if (name == "gcb") {
    arch_detail::grouped_stage(b, w, g);
  } else if (name == "separable") {
    append(b, {SeparableConv{w, w, 3}, BatchNorm{w}, ReLU{}});
  } else if (name == "squeeze") {
    append(b, {Fire{w, w / 4, w / 2}, BatchNorm{w}});
  } else if (name == "inception") {
    append(b, {Inception{w, {{1, w / 4}, {3, w / 2}, {5, w / 4}}}, BatchNorm{w}});
  } else if (name == "gcb_inception") {
    arch_detail::grouped_stage(b, w, g);
    append(b, {Inception{w, {{1, w / 8}, {3, w / 4}, {5, w / 8}}}, BatchNorm{w / 2}, ConvBlock{w / 2, w, 1, 1, 1},
               BatchNorm{w}, ReLU{}});
  } else if (name == "squeeze_gcb") {
    append(b, {Fire{w, w / 8, w / 2}, BatchNorm{w}});
    arch_detail::grouped_stage(b, w, g);
  } else if (name == "squeeze2_gcb") {
    append(b, {Fire{w, w / 8, w / 2}, BatchNorm{w}, Fire{w, w / 8, w / 2}, BatchNorm{w}});
    arch_detail::grouped_stage(b, w, g);
  } else {
    throw SpecError("unknown architecture '" + name + "'");
  }
  append(b, {SkipAdd{c1_out}, ConvBlock{w, 1, 3, 1, 1}, Sigmoid{}});
  validate(s);
  return s;
}

// ---------------------------------------------------------------------------
// Text form, one block per line:
//   name <id>            in <channels>           out <channels>
//   conv <cin> <cout> <k> [groups] [stride]      shuffle <groups>
//   sep <cin> <cout> <k>                         fire <cin> <squeeze> <expand>
//   inception <cin> <k>:<width> ...              maxpool | upsample | relu | sigmoid
//   concat <source> | add <source>               bn <channels>
// '#' starts a comment.

inline std::string to_text(const ArchSpec& spec) {
  std::ostringstream o;
  o << "name " << spec.name << "\nin " << spec.in_channels << "\nout " << spec.out_channels << "\n";
  for (const auto& block : spec.blocks) {
    std::visit(overloaded{
                   [&](const ConvBlock& b) { o << "conv " << b.cin << ' ' << b.cout << ' ' << b.k << ' ' << b.groups << ' ' << b.stride; },
                   [&](const ChannelShuffle& b) { o << "shuffle " << b.groups; },
                   [&](const SeparableConv& b) { o << "sep " << b.cin << ' ' << b.cout << ' ' << b.k; },
                   [&](const Fire& b) { o << "fire " << b.cin << ' ' << b.squeeze << ' ' << b.expand; },
                   [&](const Inception& b) {
                     o << "inception " << b.cin;
                     for (const auto& br : b.branches) o << ' ' << br.k << ':' << br.width;
                   },
                   [&](const MaxPool&) { o << "maxpool"; },
                   [&](const UpsampleNearest&) { o << "upsample"; },
                   [&](const SkipConcat& b) { o << "concat " << b.source; },
                   [&](const SkipAdd& b) { o << "add " << b.source; },
                   [&](const ReLU&) { o << "relu"; },
                   [&](const BatchNorm& b) { o << "bn " << b.channels; },
                   [&](const Sigmoid&) { o << "sigmoid"; },
               },
               block);
    o << '\n';
  }
  return o.str();
}

inline ArchSpec parse_arch(const std::string& text) {
  ArchSpec spec;
  spec.name = "custom";
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string op;
    if (!(ls >> op)) continue;
    const std::string where = "arch line " + std::to_string(lineno) + ": ";
    auto ints = [&](int min_count, int max_count) {
      std::vector<int> v;
      int x;
      while (ls >> x) v.push_back(x);
      if (!ls.eof()) throw ParseError(where + "expected integers after '" + op + "'");
      if (static_cast<int>(v.size()) < min_count || static_cast<int>(v.size()) > max_count)
        throw ParseError(where + "wrong number of arguments for '" + op + "'");
      return v;
    };
    if (op == "name") {
      if (!(ls >> spec.name)) throw ParseError(where + "missing name");
    } else if (op == "in") {
      spec.in_channels = ints(1, 1)[0];
    } else if (op == "out") {
      spec.out_channels = ints(1, 1)[0];
    } else if (op == "conv") {
      auto v = ints(3, 5);
      spec.blocks.push_back(ConvBlock{v[0], v[1], v[2], v.size() > 3 ? v[3] : 1, v.size() > 4 ? v[4] : 1});
    } else if (op == "shuffle") {
      spec.blocks.push_back(ChannelShuffle{ints(1, 1)[0]});
    } else if (op == "sep") {
      auto v = ints(3, 3);
      spec.blocks.push_back(SeparableConv{v[0], v[1], v[2]});
    } else if (op == "fire") {
      auto v = ints(3, 3);
      spec.blocks.push_back(Fire{v[0], v[1], v[2]});
    } else if (op == "inception") {
      Inception inc;
      if (!(ls >> inc.cin)) throw ParseError(where + "inception needs cin");
      std::string br;
      while (ls >> br) {
        const auto colon = br.find(':');
        if (colon == std::string::npos) throw ParseError(where + "inception branch must be k:width");
        try {
          inc.branches.push_back({std::stoi(br.substr(0, colon)), std::stoi(br.substr(colon + 1))});
        } catch (const std::logic_error&) {
          throw ParseError(where + "bad inception branch '" + br + "'");
        }
      }
      spec.blocks.push_back(std::move(inc));
    } else if (op == "maxpool") {
      ints(0, 0);
      spec.blocks.push_back(MaxPool{});
    } else if (op == "upsample") {
      ints(0, 0);
      spec.blocks.push_back(UpsampleNearest{});
    } else if (op == "concat") {
      spec.blocks.push_back(SkipConcat{ints(1, 1)[0]});
    } else if (op == "add") {
      spec.blocks.push_back(SkipAdd{ints(1, 1)[0]});
    } else if (op == "relu") {
      ints(0, 0);
      spec.blocks.push_back(ReLU{});
    } else if (op == "bn") {
      spec.blocks.push_back(BatchNorm{ints(1, 1)[0]});
    } else if (op == "sigmoid") {
      ints(0, 0);
      spec.blocks.push_back(Sigmoid{});
    } else {
      throw ParseError(where + "unknown block '" + op + "'");
    }
  }
  validate(spec);
  return spec;
}

}  // namespace aefuse
