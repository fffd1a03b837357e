#include <gtest/gtest.h>

#include <json.hpp>
#include <sstream>

#include "aefuse/bench.hpp"
#include "aefuse/dataset.hpp"

using namespace aefuse;

namespace {

BenchProtocol tiny_protocol(int trials = 5) {
  BenchProtocol p;
  p.image_size = 16;
  p.trials = trials;
  return p;
}

BuiltinOptions tiny_net() {
  BuiltinOptions o;
  o.width = 8;
  o.gc_groups = 2;
  return o;
}

// Scripted clock: within trial t every timed region lasts exactly t + 1 ms and
// every conversion step 1 ms, so each recorded sample names its trial.
struct FakeClock {
  int calls_per_trial;
  int calls = 0;
  double operator()() {
    const int t = calls / calls_per_trial, k = calls % calls_per_trial;
    ++calls;
    const double base = 1000.0 * t;
    if (calls_per_trial == 2) return k == 0 ? base : base + t + 1;
    // t0, t1 = t0 + 1, t2 = t1 + (t + 1), t3 = t2 + 1
    const double offsets[] = {0, 1, 2.0 + t, 3.0 + t};
    return base + offsets[k];
  }
};

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, sep)) out.push_back(field);
  return out;
}

// CSV text without the three latency columns.
std::string static_columns(const std::string& csv) {
  std::stringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    auto f = split(line, ',');
    f.erase(f.begin() + 2, f.begin() + 5);
    for (const auto& x : f) out += x + ",";
    out += "\n";
  }
  return out;
}

}  // namespace

TEST(Timing, FakeClockSkipsWarmupForFuser) {
  FakeClock clock{2};
  const auto r = time_method("avg", tiny_protocol(5), std::ref(clock));
  EXPECT_EQ(clock.calls, 10);
  EXPECT_EQ(r.latency.samples_ms, (std::vector<double>{2, 3, 4, 5}));
  EXPECT_DOUBLE_EQ(r.latency.mean_ms, 3.5);
  EXPECT_NEAR(r.latency.stddev_ms, std::sqrt(5.0 / 3.0), 1e-12);
  EXPECT_FALSE(r.network);
  EXPECT_EQ(r.params, 0u);
}

TEST(Timing, FakeClockSkipsWarmupForNetwork) {
  FakeClock clock{4};
  BenchProtocol p = tiny_protocol(4);
  p.warmup_skip = 2;
  const auto r = time_method("gcb", p, std::ref(clock), nullptr, tiny_net());
  EXPECT_EQ(clock.calls, 16);
  EXPECT_EQ(r.latency.samples_ms, (std::vector<double>{3, 4}));
  EXPECT_EQ(r.end_to_end.samples_ms, (std::vector<double>{5, 6}));
  EXPECT_TRUE(r.network);
}

TEST(Timing, TwoTrialsMeanOverOneRun) {
  FakeClock clock{2};
  const auto r = time_method("absmax", tiny_protocol(2), std::ref(clock));
  ASSERT_EQ(r.latency.samples_ms.size(), 1u);
  EXPECT_DOUBLE_EQ(r.latency.mean_ms, 2.0);
  EXPECT_EQ(r.latency.stddev_ms, 0.0);
}

TEST(Timing, ProtocolErrors) {
  EXPECT_THROW(time_method("avg", tiny_protocol(1)), RangeError);
  BenchProtocol p = tiny_protocol(3);
  p.warmup_skip = 3;
  EXPECT_THROW(time_method("avg", p), RangeError);
  p.warmup_skip = 0;
  EXPECT_THROW(time_method("avg", p), RangeError);
  EXPECT_THROW(time_method("nope", tiny_protocol()), UnknownAlgorithmError);
}

TEST(Timing, AverageFasterThanPyramid) {
  BenchProtocol p;
  p.image_size = 128;
  p.trials = 6;
  EXPECT_LT(time_method("avg", p).latency.mean_ms, time_method("lp", p).latency.mean_ms);
}

TEST(Timing, GroupedBlockNotSlowerThanRegular) {
  BenchProtocol p;
  p.image_size = 64;
  p.trials = 4;
  EXPECT_LE(time_method("gcb", p).latency.mean_ms, time_method("regular", p).latency.mean_ms);
}

TEST(Profile, CostRelations) {
  const auto gcb = profile_arch("gcb", 400, 400);
  EXPECT_GE(gcb.params, 1000u);
  EXPECT_LT(gcb.params, 10000u);
  for (const auto& name : builtin_spec_names()) {
    const auto r = profile_arch(name, 400, 400);
    if (name != "gcb" && !is_pooled(builtin_spec(name))) {
      EXPECT_LT(gcb.bytes, r.bytes) << name;
    }
    EXPECT_EQ(profile_arch(name, 80, 64).flops * 4, profile_arch(name, 160, 128).flops) << name;
    EXPECT_FALSE(r.assumptions.empty());
  }
  EXPECT_LT(profile_arch("separable", 400, 400).params, profile_arch("regular", 400, 400).params);
  const auto avg = profile_arch("avg", 400, 400);
  EXPECT_FALSE(avg.network);
  EXPECT_EQ(avg.bytes, 0u);
  EXPECT_THROW(profile_arch("bogus", 400, 400), SpecError);
  const std::string text = format_cost_report(gcb);
  EXPECT_NE(text.find("params: 6721"), std::string::npos);
  EXPECT_NE(text.find("[1] "), std::string::npos);
}

TEST(Report, ShapeSortingAndJsonMirror) {
  const auto pairs = synthetic_dataset(3, 32, 32, 4);
  FakeClock clock{2};
  const auto rep = run_benchmark({"lp", "avg"}, tiny_protocol(3), pairs, nullptr, std::ref(clock));
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_EQ(rep.rows[0].cost.method, "avg");
  EXPECT_EQ(rep.rows[1].cost.method, "lp");

  const std::string csv = format_bench_csv(rep);
  std::stringstream lines(csv);
  std::string header;
  std::getline(lines, header);
  EXPECT_EQ(header, kBenchCsvHeader);
  const auto columns = split(header, ',');

  const auto json = nlohmann::json::parse(format_bench_json(rep));
  EXPECT_EQ(json["pairs"], 3);
  ASSERT_EQ(json["rows"].size(), 2u);
  std::string line;
  for (std::size_t r = 0; std::getline(lines, line); ++r) {
    const auto fields = split(line, ',');
    ASSERT_EQ(fields.size(), columns.size());
    const auto& row = json["rows"][r];
    EXPECT_EQ(row["method"].get<std::string>(), fields[0]);
    for (std::size_t k = 1; k < columns.size(); ++k)
      EXPECT_EQ(row[columns[k]].get<double>(), std::stod(fields[k])) << columns[k];
  }
}

TEST(Report, DeterministicStaticColumnsAndDuplicates) {
  const auto pairs = synthetic_dataset(2, 32, 32, 5);
  const std::vector<std::string> methods{"gcb", "avg", "avg", "gradsel"};
  const auto a = run_benchmark(methods, tiny_protocol(2), pairs, nullptr, steady_clock_ms, {}, tiny_net());
  const auto b = run_benchmark(methods, tiny_protocol(2), pairs, nullptr, steady_clock_ms, {}, tiny_net());
  EXPECT_EQ(static_columns(format_bench_csv(a)), static_columns(format_bench_csv(b)));
  ASSERT_EQ(a.rows.size(), 4u);
  EXPECT_EQ(a.rows[0].cost.method, "avg");
  EXPECT_EQ(a.rows[1].cost.method, "avg");
  EXPECT_EQ(a.rows[0].quality, a.rows[1].quality);
  EXPECT_THROW(run_benchmark({}, tiny_protocol(), pairs), EmptyInputError);
  EXPECT_THROW(run_benchmark({"avg"}, tiny_protocol(), {}), EmptyInputError);
  EXPECT_THROW(run_benchmark({"avg", "zzz"}, tiny_protocol(), pairs), UnknownAlgorithmError);
}

TEST(Report, FullSweepGcbSmallestNetworkFile) {
  const auto pairs = synthetic_dataset(1, 34, 34, 6);
  std::vector<std::string> methods = builtin_spec_names();
  methods.push_back("avg");
  const auto rep = run_benchmark(methods, tiny_protocol(2), pairs);
  std::size_t gcb_bytes = 0, min_bytes = SIZE_MAX;
  for (const auto& r : rep.rows) {
    if (!r.cost.network) continue;
    if (r.cost.method == "gcb") gcb_bytes = r.cost.bytes;
    min_bytes = std::min(min_bytes, r.cost.bytes);
    EXPECT_EQ(r.cost.height, 16);  // timing size, independent of the pair crop
  }
  EXPECT_EQ(gcb_bytes, min_bytes);
}
