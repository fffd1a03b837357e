#pragma once

// Cost profiling, latency timing with a warmup skip, and benchmark reports.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "aefuse/arch.hpp"
#include "aefuse/errors.hpp"
#include "aefuse/evolution.hpp"
#include "aefuse/fusion.hpp"
#include "aefuse/network.hpp"
#include "aefuse/random.hpp"

namespace aefuse {

struct BenchProtocol {
  int image_size = 400;
  int trials = 300;
  int warmup_skip = 1;
  int bit_depth = 8;
  std::uint64_t seed = 7;

  void validate() const {
    if (image_size < 1) throw RangeError("image size must be >= 1");
    if (trials < 2) throw RangeError("trials must be >= 2");
    if (warmup_skip < 1 || warmup_skip >= trials) throw RangeError("warmup_skip must lie in [1, trials)");
  }
};

/// Milliseconds from an arbitrary origin.
using BenchClock = std::function<double()>;

inline double steady_clock_ms() {
  using namespace std::chrono;
  return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

struct LatencyStats {
  double mean_ms = 0;
  double stddev_ms = 0;
  std::vector<double> samples_ms;  // timed runs only, in trial order
};

inline LatencyStats summarize_latency(std::vector<double> samples) {
  LatencyStats s;
  if (samples.empty()) return s;
  double sum = 0;
  for (double v : samples) sum += v;
  s.mean_ms = sum / static_cast<double>(samples.size());
  double sq = 0;
  for (double v : samples) sq += (v - s.mean_ms) * (v - s.mean_ms);
  s.stddev_ms = samples.size() > 1 ? std::sqrt(sq / static_cast<double>(samples.size() - 1)) : 0.0;
  s.samples_ms = std::move(samples);
  return s;
}

struct CostReport {
  std::string method;
  bool network = false;
  std::size_t params = 0;   // trainable
  std::size_t buffers = 0;  // BN running statistics
  std::uint64_t flops = 0;  // 2 x MACs at (height, width)
  std::size_t bytes = 0;    // serialized weight file
  int height = 0, width = 0;
  LatencyStats latency;     // core computation only
  LatencyStats end_to_end;  // including tensor/image conversion
  std::vector<std::string> assumptions;
};

inline std::vector<std::string> cost_assumptions(const ArchSpec& spec, const BuiltinOptions& opt) {
  std::vector<std::string> out{"input channels = " + std::to_string(spec.in_channels) +
                               " (grayscale pair concatenated)"};
  const auto names = builtin_spec_names();
  if (std::find(names.begin(), names.end(), spec.name) != names.end()) {
    out.push_back("grouped convolutions use " + std::to_string(opt.gc_groups) + " groups");
    out.push_back("feature width = " + std::to_string(opt.width));
  }
  out.insert(out.end(), {
                            "params = conv weights + biases + BN scale/shift; BN running mean/var counted as buffers",
                            "flops = 2 x multiply-accumulates; pooling, shuffle, activations, additions count 0",
                            "bytes = AENW weight file incl. header and buffers, 32-bit floats",
                        });
  return out;
}

/// Static costs of a built-in network at (h, w). Classical fusers have none.
inline CostReport profile_arch(const std::string& method, int h, int w, const BuiltinOptions& opt = {}) {
  CostReport r;
  r.method = method;
  r.height = h;
  r.width = w;
  if (is_fuser(method)) return r;
  const ArchSpec spec = builtin_spec(method, opt);
  r.network = true;
  r.params = count_params(spec);
  r.buffers = count_buffers(spec);
  r.flops = count_flops(spec, h, w);
  r.bytes = weights_file_bytes(spec);
  r.assumptions = cost_assumptions(spec, opt);
  return r;
}

inline CostReport profile_arch(const ArchSpec& spec, int h, int w, const BuiltinOptions& opt = {}) {
  CostReport r;
  r.method = spec.name;
  r.network = true;
  r.height = h;
  r.width = w;
  r.params = count_params(spec);
  r.buffers = count_buffers(spec);
  r.flops = count_flops(spec, h, w);
  r.bytes = weights_file_bytes(spec);
  r.assumptions = cost_assumptions(spec, opt);
  return r;
}

inline bool is_known_method(const std::string& method) {
  if (is_fuser(method)) return true;
  const auto names = builtin_spec_names();
  return std::find(names.begin(), names.end(), method) != names.end();
}

/// Seeded pseudo-random pair for trial `index`.
inline ImagePair bench_pair(const BenchProtocol& p, int index) {
  Rng rng(p.seed + static_cast<std::uint64_t>(index) * 0x9E3779B97F4A7C15ull);
  const ImageGray a = random_image(p.image_size, p.image_size, rng);
  const ImageGray b = random_image(p.image_size, p.image_size, rng);
  return ImagePair(a, b, "bench" + std::to_string(index));
}

/// Times `trials` runs on fresh pseudo-random pairs; the first `warmup_skip`
/// runs are executed but not recorded. Input generation is outside the timed
/// region. Network methods use seeded weights unless `params` is given, in
/// which case `method` is only a label.
inline CostReport time_method(const std::string& method, const BenchProtocol& protocol,
                              const BenchClock& clock = steady_clock_ms, const NetParams<float>* params = nullptr,
                              const BuiltinOptions& opt = {}) {
  protocol.validate();
  if (!params && !is_known_method(method)) throw UnknownAlgorithmError("unknown method '" + method + "'");
  CostReport r = params ? profile_arch(params->spec, protocol.image_size, protocol.image_size, opt)
                        : profile_arch(method, protocol.image_size, protocol.image_size, opt);
  std::optional<NetParams<float>> owned;
  if (r.network && !params) {
    owned = build_network<float>(method, protocol.seed, opt);
    params = &*owned;
  }
  std::vector<double> core, e2e;
  for (int t = 0; t < protocol.trials; ++t) {
    const ImagePair pair = bench_pair(protocol, t);
    double t0, t1, t2, t3;
    if (r.network) {
      t0 = clock();
      const Tensor4<float> in = pair_tensor<float>(pair);
      t1 = clock();
      const Tensor4<float> out = net_forward(*params, in);
      t2 = clock();
      const ImageGray fused = tensor_image(out);
      t3 = clock();
      (void)fused;
    } else {
      t0 = clock();
      t1 = t0;
      const FusionCandidate c = run_fuser(method, pair);
      t2 = clock();
      t3 = t2;
      (void)c;
    }
    if (t >= protocol.warmup_skip) {
      core.push_back(t2 - t1);
      e2e.push_back(t3 - t0);
    }
  }
  r.latency = summarize_latency(std::move(core));
  r.end_to_end = summarize_latency(std::move(e2e));
  return r;
}

// ---------------------------------------------------------------------------
// Benchmark report

struct BenchRow {
  CostReport cost;
  double quality = 0;  // mean over pairs of the combined score within the method pool
};

struct BenchReport {
  std::vector<BenchRow> rows;  // sorted by method name
  std::size_t pair_count = 0;
};

inline constexpr const char* kBenchCsvHeader =
    "method,quality,latency_ms,latency_std_ms,e2e_ms,params,bytes,flops,height,width";

/// Crops a pair to the largest size divisible by `multiple`.
inline ImagePair crop_to_multiple(const ImagePair& pair, int multiple) {
  const int w = pair.width() / multiple * multiple, h = pair.height() / multiple * multiple;
  if (w < 1 || h < 1) throw DimensionError("pair smaller than the network's spatial multiple");
  if (w == pair.width() && h == pair.height()) return pair;
  return ImagePair(crop(pair.a, 0, 0, w, h), crop(pair.b, 0, 0, w, h), pair.pair_id, pair.task);
}

/// Quality is the combined score of each method's output normalized against
/// the other listed methods on the same pair, averaged over pairs. Pairs are
/// cropped to a size every listed network accepts.
inline BenchReport run_benchmark(const std::vector<std::string>& methods, const BenchProtocol& protocol,
                                 const std::vector<ImagePair>& pairs, const NiqeModel* niqe = nullptr,
                                 const BenchClock& clock = steady_clock_ms,
                                 const std::map<std::string, NetParams<float>>& weights = {},
                                 const BuiltinOptions& opt = {}) {
  if (methods.empty()) throw EmptyInputError("benchmark needs at least one method");
  if (pairs.empty()) throw EmptyInputError("benchmark needs at least one pair");
  protocol.validate();
  std::map<std::string, NetParams<float>> nets;
  int multiple = 1;
  for (const auto& m : methods) {
    if (!is_known_method(m)) throw UnknownAlgorithmError("unknown method '" + m + "'");
    if (is_fuser(m) || nets.count(m)) continue;
    const auto it = weights.find(m);
    nets.emplace(m, it != weights.end() ? it->second : build_network<float>(m, protocol.seed, opt));
    multiple = std::lcm(multiple, spatial_multiple(nets.at(m).spec));
  }
  BenchReport rep;
  rep.pair_count = pairs.size();
  std::vector<double> quality(methods.size(), 0.0);
  for (const auto& raw : pairs) {
    const ImagePair pair = crop_to_multiple(raw, multiple);
    std::vector<FusionCandidate> pool;
    for (const auto& m : methods) {
      if (is_fuser(m))
        pool.push_back(run_fuser(m, pair));
      else
        pool.push_back({m, tensor_image(net_forward(nets.at(m), pair)), std::nullopt});
    }
    const auto scored = evaluate_candidates(pair, std::move(pool), niqe);
    for (std::size_t i = 0; i < methods.size(); ++i) quality[i] += scored[i].scores->combined;
  }
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const auto it = nets.find(methods[i]);
    BenchRow row{time_method(methods[i], protocol, clock, it != nets.end() ? &it->second : nullptr, opt),
                 quality[i] / static_cast<double>(pairs.size())};
    rep.rows.push_back(std::move(row));
  }
  std::stable_sort(rep.rows.begin(), rep.rows.end(),
                   [](const BenchRow& a, const BenchRow& b) { return a.cost.method < b.cost.method; });
  return rep;
}

namespace bench_detail {

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string json_string(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out + "\"";
}

}  // namespace bench_detail

inline std::string format_bench_csv(const BenchReport& rep) {
  using bench_detail::num;
  std::string out = std::string(kBenchCsvHeader) + "\n";
  for (const auto& r : rep.rows) {
    const auto& c = r.cost;
    out += c.method + "," + num(r.quality) + "," + num(c.latency.mean_ms) + "," + num(c.latency.stddev_ms) + "," +
           num(c.end_to_end.mean_ms) + "," + std::to_string(c.params) + "," + std::to_string(c.bytes) + "," +
           std::to_string(c.flops) + "," + std::to_string(c.height) + "," + std::to_string(c.width) + "\n";
  }
  return out;
}

inline std::string format_bench_json(const BenchReport& rep) {
  using bench_detail::json_string;
  using bench_detail::num;
  std::string out = "{\n  \"pairs\": " + std::to_string(rep.pair_count) + ",\n  \"rows\": [";
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    const auto& r = rep.rows[i];
    const auto& c = r.cost;
    out += i ? ",\n    {" : "\n    {";
    out += "\"method\": " + json_string(c.method) + ", \"quality\": " + num(r.quality) +
           ", \"latency_ms\": " + num(c.latency.mean_ms) + ", \"latency_std_ms\": " + num(c.latency.stddev_ms) +
           ", \"e2e_ms\": " + num(c.end_to_end.mean_ms) + ", \"params\": " + std::to_string(c.params) +
           ", \"bytes\": " + std::to_string(c.bytes) + ", \"flops\": " + std::to_string(c.flops) +
           ", \"height\": " + std::to_string(c.height) + ", \"width\": " + std::to_string(c.width) +
           ", \"assumptions\": [";
    for (std::size_t k = 0; k < c.assumptions.size(); ++k)
      out += (k ? ", " : "") + json_string(c.assumptions[k]);
    out += "]}";
  }
  out += rep.rows.empty() ? "]\n}\n" : "\n  ]\n}\n";
  return out;
}

/// Writes bench.csv and bench.json into `dir`.
inline void save_bench_report(const BenchReport& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : {std::pair{"bench.csv", format_bench_csv(rep)},
                                   std::pair{"bench.json", format_bench_json(rep)}}) {
    std::ofstream out(dir / name, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + (dir / name).string() + "'");
    out << text;
  }
}

inline std::string format_cost_report(const CostReport& c) {
  std::string out = "method: " + c.method + "\n";
  out += "input: " + std::to_string(c.height) + "x" + std::to_string(c.width) + "\n";
  out += "params: " + std::to_string(c.params) + "\n";
  out += "buffers: " + std::to_string(c.buffers) + "\n";
  out += "flops: " + std::to_string(c.flops) + "\n";
  out += "bytes: " + std::to_string(c.bytes) + "\n";
  if (!c.latency.samples_ms.empty())
    out += "latency_ms: " + bench_detail::num(c.latency.mean_ms) + " +- " + bench_detail::num(c.latency.stddev_ms) +
           " (" + std::to_string(c.latency.samples_ms.size()) + " runs)\n";
  for (std::size_t i = 0; i < c.assumptions.size(); ++i)
    out += "[" + std::to_string(i + 1) + "] " + c.assumptions[i] + "\n";
  return out;
}

}  // namespace aefuse
