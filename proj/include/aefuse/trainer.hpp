#pragma once

// Two-phase training toward the solution bank, the evolve loop, and the
// common/task-specific weight decomposition.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aefuse/arch.hpp"
#include "aefuse/errors.hpp"
#include "aefuse/evolution.hpp"
#include "aefuse/image.hpp"
#include "aefuse/loss.hpp"
#include "aefuse/network.hpp"
#include "aefuse/optim.hpp"
#include "aefuse/random.hpp"

namespace aefuse {

struct TrainPhase {
  double learning_rate = 0.001;
  int epochs = 1;
};

enum class LossKind { to_optimal, supervised };

/// Optional extra loss term on a single (1,1,H,W) prediction. Returns its
/// value and adds its gradient into `grad`.
using LossHook = std::function<double(const Tensor4<float>& pred, Tensor4<float>& grad)>;

struct TrainConfig {
  std::vector<TrainPhase> phases{{0.001, 10}, {0.0001, 100}};
  int batch_size = 16;
  int patch = 128;
  double loss_threshold = 0.0;  // stop once an epoch mean is <= this; 0 disables
  std::uint64_t seed = 0;
  LossKind loss_kind = LossKind::to_optimal;
  int checkpoint_every = 0;  // epochs; 0 disables
  std::filesystem::path checkpoint_dir;
  LossHook regularizer;

  void validate() const {
    if (phases.empty()) throw SpecError("training needs at least one phase");
    for (const auto& p : phases) {
      if (!(p.learning_rate > 0)) throw RangeError("learning rate must be > 0");
      if (p.epochs < 1) throw RangeError("phase epochs must be >= 1");
    }
    if (batch_size < 1) throw RangeError("batch size must be >= 1");
    if (patch < 1) throw RangeError("patch size must be >= 1");
    if (loss_threshold < 0) throw RangeError("loss threshold must be >= 0");
    if (checkpoint_every < 0) throw RangeError("checkpoint interval must be >= 0");
  }
};

struct EpochRecord {
  int epoch = 0;  // 1-based across phases
  int phase = 0;  // 1-based
  double learning_rate = 0;
  double mean_loss = 0;
};

using LossCurve = std::vector<EpochRecord>;

inline std::string format_loss_csv(const LossCurve& curve) {
  std::string out = "epoch,phase,mean_loss\n";
  char line[96];
  for (const auto& r : curve) {
    std::snprintf(line, sizeof line, "%d,%d,%.9g\n", r.epoch, r.phase, r.mean_loss);
    out += line;
  }
  return out;
}

inline void save_loss_csv(const LossCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << format_loss_csv(curve);
}

/// One training sample: co-located input, source and target patches.
struct TrainSample {
  Tensor4<float> input;  // (1, 2, p, p)
  ImagePair sources;
  std::optional<ImageGray> target;
};

inline std::vector<TrainSample> make_samples(const std::vector<ImagePair>& dataset, const SolutionBank* bank,
                                             const TrainConfig& cfg) {
  std::vector<TrainSample> out;
  for (const auto& pair : dataset) {
    const auto patches = extract_patches(pair, cfg.patch, cfg.patch);
    std::vector<ImagePair> targets;
    if (cfg.loss_kind == LossKind::to_optimal) {
      const FusionCandidate* o = bank ? bank->find(pair.pair_id) : nullptr;
      if (!o) throw BankMissError("no bank entry for pair '" + pair.pair_id + "'");
      targets = extract_patches(ImagePair(o->fused, o->fused, pair.pair_id), cfg.patch, cfg.patch);
    }
    for (std::size_t i = 0; i < patches.size(); ++i) {
      TrainSample s{pair_tensor<float>(patches[i]), patches[i], std::nullopt};
      if (!targets.empty()) s.target = targets[i].a;
      out.push_back(std::move(s));
    }
  }
  if (out.empty()) throw EmptyInputError("no training samples");
  return out;
}

/// Mutable state of a training run, reusable across calls for warm starts.
struct TrainState {
  NetParams<float> params;
  AdamState<float> adam;
  LossCurve curve;
  Rng rng;

  TrainState(NetParams<float> p, std::uint64_t seed) : params(std::move(p)), adam(adam_init(params)), rng(seed) {}
};

struct TrainControl {
  std::vector<bool> frozen;
  double gamma_input_scale = 1.0;
};

namespace trainer_detail {

inline LossResult<float> sample_loss(const Tensor4<float>& pred, const TrainSample& s, const TrainConfig& cfg) {
  LossResult<float> r = cfg.loss_kind == LossKind::to_optimal ? loss_to_optimal(pred, *s.target)
                                                              : supervised_loss(pred, s.sources);
  if (cfg.regularizer) r.loss += cfg.regularizer(pred, r.grad);
  return r;
}

inline std::string checkpoint_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04d.aenw", epoch);
  return buf;
}

}  // namespace trainer_detail

/// Runs every phase of `cfg` on `samples`, appending to `state.curve`.
/// Returns false if the loss threshold stopped training early.
inline bool run_phases(TrainState& state, const std::vector<TrainSample>& samples, const TrainConfig& cfg,
                       const TrainControl& ctl = {}) {
  cfg.validate();
  ForwardOptions fwd;
  fwd.mode = Mode::train;
  fwd.frozen = ctl.frozen;
  fwd.gamma_input_scale = ctl.gamma_input_scale;
  std::vector<std::size_t> order(samples.size());
  int epoch = state.curve.empty() ? 0 : state.curve.back().epoch;
  for (std::size_t ph = 0; ph < cfg.phases.size(); ++ph) {
    const TrainPhase& phase = cfg.phases[ph];
    for (int e = 0; e < phase.epochs; ++e) {
      ++epoch;
      // fresh permutation per epoch, so a resumed run matches a continuous one
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      state.rng.shuffle(order.begin(), order.end());
      double loss_sum = 0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        std::vector<Tensor4<float>> inputs;
        for (std::size_t k = start; k < end; ++k) inputs.push_back(samples[order[k]].input);
        const Tensor4<float> batch = stack_batch(inputs);
        const auto trace = net_forward_trace(state.params, batch, fwd);
        const Tensor4<float>& out = trace.output();
        Tensor4<float> grad(out.shape());
        const float inv_b = 1.0f / static_cast<float>(end - start);
        for (std::size_t k = start; k < end; ++k) {
          const int n = static_cast<int>(k - start);
          auto r = trainer_detail::sample_loss(slice_batch(out, n), samples[order[k]], cfg);
          loss_sum += r.loss;
          float* g = grad.plane(n, 0);
          for (std::size_t i = 0; i < r.grad.size(); ++i) g[i] = r.grad[i] * inv_b;
        }
        const NetGrads<float> grads = net_backward(state.params, trace, grad, fwd);
        adam_step(state.params, grads.blocks, state.adam, phase.learning_rate, ctl.frozen);
      }
      const double mean = loss_sum / static_cast<double>(samples.size());
      state.curve.push_back({epoch, static_cast<int>(ph) + 1, phase.learning_rate, mean});
      if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
        std::filesystem::create_directories(cfg.checkpoint_dir);
        save_weights(state.params, cfg.checkpoint_dir / trainer_detail::checkpoint_name(epoch));
      }
      if (cfg.loss_threshold > 0 && mean <= cfg.loss_threshold) return false;
    }
  }
  return true;
}

struct TrainResult {
  NetParams<float> params;
  LossCurve curve;
};

/// Trains a freshly initialized network (seeded by cfg.seed) on patches of
/// `dataset`, toward the bank optima or the sources depending on loss_kind.
inline TrainResult train(const ArchSpec& spec, const std::vector<ImagePair>& dataset, const SolutionBank& bank,
                         const TrainConfig& cfg) {
  cfg.validate();
  const auto samples = make_samples(dataset, &bank, cfg);
  TrainState state(build_network<float>(spec, cfg.seed), cfg.seed);
  run_phases(state, samples, cfg);
  return {std::move(state.params), std::move(state.curve)};
}

// ---------------------------------------------------------------------------
// Evolution loop

struct EvolveResult {
  NetParams<float> params;
  SolutionBank bank;
  LossCurve curve;
  // history[r][pair_id] = stored combined score after round r (r = 0 is the
  // classical bank).
  std::vector<std::map<std::string, double>> history;
  std::vector<std::map<std::string, UpdateOutcome>> outcomes;  // per round >= 1
};

inline std::map<std::string, double> bank_scores(const SolutionBank& bank) {
  std::map<std::string, double> out;
  for (const auto& [id, c] : bank.entries) out[id] = c.scores ? c.scores->combined : 0.0;
  return out;
}

/// Eval-mode fused image of a full pair.
inline ImageGray net_fuse(const NetParams<float>& params, const ImagePair& pair) {
  return tensor_image(net_forward(params, pair));
}

/// Called with the bank after round 0 (classical) and after every round.
using RoundObserver = std::function<void(int round, const SolutionBank& bank)>;

/// Starting from the classical bank, each round trains (warm-started) toward
/// the current bank, runs the network over every pair and offers each output
/// to the bank.
inline EvolveResult evolve(const ArchSpec& spec, const std::vector<ImagePair>& dataset, const TrainConfig& cfg,
                           int rounds, const NiqeModel* niqe = nullptr,
                           const std::vector<std::string>& algos = bank_algorithms(),
                           const MetricWeights& weights = {}, const RoundObserver& observer = {}) {
  if (rounds < 0) throw RangeError("rounds must be >= 0");
  cfg.validate();
  EvolveResult res{build_network<float>(spec, cfg.seed), initial_bank(dataset, niqe, algos, weights), {}, {}, {}};
  res.history.push_back(bank_scores(res.bank));
  if (observer) observer(0, res.bank);
  if (rounds == 0) return res;
  TrainState state(std::move(res.params), cfg.seed);
  for (int r = 1; r <= rounds; ++r) {
    run_phases(state, make_samples(dataset, &res.bank, cfg), cfg);
    std::map<std::string, UpdateOutcome> round_outcomes;
    const std::string algo = "net:" + spec.name + ":r" + std::to_string(r);
    for (const auto& pair : dataset)
      round_outcomes[pair.pair_id] =
          offer(res.bank, pair.pair_id, {algo, net_fuse(state.params, pair), std::nullopt}, pair, niqe);
    res.bank.advance_generation();
    res.history.push_back(bank_scores(res.bank));
    res.outcomes.push_back(std::move(round_outcomes));
    if (observer) observer(r, res.bank);
  }
  res.params = std::move(state.params);
  res.curve = std::move(state.curve);
  return res;
}

// ---------------------------------------------------------------------------
// Common and task-specific weights

/// Groups pairs by task (enum order), shuffles each group with `seed`, then
/// takes one pair from each non-exhausted group in turn.
inline std::vector<ImagePair> interleave_tasks(const std::vector<ImagePair>& dataset, std::uint64_t seed) {
  std::map<Task, std::vector<ImagePair>> groups;
  for (const auto& p : dataset) groups[p.task].push_back(p);
  Rng rng(seed);
  for (auto& [t, g] : groups) rng.shuffle(g.begin(), g.end());
  std::vector<ImagePair> out;
  out.reserve(dataset.size());
  for (std::size_t i = 0; out.size() < dataset.size(); ++i)
    for (auto& [t, g] : groups)
      if (i < g.size()) out.push_back(g[i]);
  return out;
}

inline TrainResult train_common(const ArchSpec& spec, const std::vector<ImagePair>& mixed, const SolutionBank& bank,
                                const TrainConfig& cfg) {
  std::map<Task, int> tasks;
  for (const auto& p : mixed) ++tasks[p.task];
  if (tasks.size() < 2) throw TaskMixError("common training needs pairs from at least two tasks");
  return train(spec, interleave_tasks(mixed, cfg.seed), bank, cfg);
}

enum class UniqueInit { fresh, from_common };

struct TaskWeights {
  NetParams<float> common;
  std::vector<BlockTensors<float>> unique;  // output-stage blocks, from gamma_start on
  double beta_mix = 1.0;
  std::optional<Task> task;
  LossCurve curve;
};

/// The network a TaskWeights represents: the common blocks followed by the
/// task's own output stage.
inline NetParams<float> compose_task_params(const TaskWeights& tw) {
  NetParams<float> p = tw.common;
  const auto g = static_cast<std::size_t>(gamma_start(p.spec));
  if (tw.unique.size() != p.blocks.size() - g) throw SpecError("task weights do not match the common spec");
  for (std::size_t i = 0; i < tw.unique.size(); ++i) p.blocks[g + i] = tw.unique[i];
  return p;
}

/// Output of the task network: the common features entering the output
/// stage are scaled by beta_mix.
inline Tensor4<float> task_forward(const TaskWeights& tw, const Tensor4<float>& input) {
  ForwardOptions opt;
  opt.gamma_input_scale = tw.beta_mix;
  return net_forward(compose_task_params(tw), input, opt);
}

inline Tensor4<float> task_forward(const TaskWeights& tw, const ImagePair& pair) {
  return task_forward(tw, pair_tensor<float>(pair));
}

/// Folds beta_mix into the first output-stage convolution, giving one plain
/// network equal to task_forward.
inline NetParams<float> blend_fusion_weights(const TaskWeights& tw) {
  NetParams<float> p = compose_task_params(tw);
  const auto g = static_cast<std::size_t>(gamma_start(p.spec));
  if (!std::holds_alternative<ConvBlock>(p.spec.blocks[g]))
    throw SpecError("output stage of '" + p.spec.name + "' does not start with a convolution");
  p.blocks[g][0] *= static_cast<float>(tw.beta_mix);
  return p;
}

/// Task weights before any adaptation: the output stage is either a fresh
/// seeded initialization or a copy of the common one.
inline TaskWeights init_task_weights(const NetParams<float>& common, double beta_mix, UniqueInit init,
                                     std::uint64_t seed) {
  if (!(beta_mix >= 0.0 && beta_mix <= 1.0)) throw RangeError("beta_mix must lie in [0, 1]");
  const auto g = static_cast<std::size_t>(gamma_start(common.spec));
  TaskWeights tw;
  tw.common = common;
  tw.beta_mix = beta_mix;
  if (init == UniqueInit::fresh) {
    const NetParams<float> fresh = build_network<float>(common.spec, seed);
    tw.unique.assign(fresh.blocks.begin() + static_cast<std::ptrdiff_t>(g), fresh.blocks.end());
  } else {
    tw.unique.assign(common.blocks.begin() + static_cast<std::ptrdiff_t>(g), common.blocks.end());
  }
  return tw;
}

/// Freezes the common blocks and trains an output stage for one task on
/// features scaled by beta_mix.
inline TaskWeights adapt_task(const NetParams<float>& common, const std::vector<ImagePair>& task_dataset,
                              const SolutionBank& bank, const TrainConfig& cfg, double beta_mix,
                              UniqueInit init = UniqueInit::fresh) {
  TaskWeights tw = init_task_weights(common, beta_mix, init, cfg.seed);
  cfg.validate();
  if (!task_dataset.empty()) tw.task = task_dataset.front().task;
  const auto g = static_cast<std::size_t>(gamma_start(common.spec));
  TrainState state(compose_task_params(tw), cfg.seed);
  TrainControl ctl;
  ctl.frozen.assign(common.blocks.size(), false);
  for (std::size_t i = 0; i < g; ++i) ctl.frozen[i] = true;
  ctl.gamma_input_scale = beta_mix;
  run_phases(state, make_samples(task_dataset, &bank, cfg), cfg, ctl);
  tw.unique.assign(state.params.blocks.begin() + static_cast<std::ptrdiff_t>(g), state.params.blocks.end());
  tw.curve = std::move(state.curve);
  return tw;
}

/// Mean loss of `params` over the patches of `dataset` (eval mode).
inline double evaluate_loss(const NetParams<float>& params, const std::vector<ImagePair>& dataset,
                            const SolutionBank& bank, const TrainConfig& cfg, double gamma_input_scale = 1.0) {
  const auto samples = make_samples(dataset, &bank, cfg);
  ForwardOptions opt;
  opt.gamma_input_scale = gamma_input_scale;
  double sum = 0;
  for (const auto& s : samples) sum += trainer_detail::sample_loss(net_forward(params, s.input, opt), s, cfg).loss;
  return sum / static_cast<double>(samples.size());
}

}  // namespace aefuse
