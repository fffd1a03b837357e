#pragma once

#include <cmath>
#include <vector>

#include "aefuse/arch.hpp"
#include "aefuse/errors.hpp"
#include "aefuse/network.hpp"

namespace aefuse {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<BlockTensors<T>> m, v;
  long step = 0;
};

template <class T>
AdamState<T> adam_init(const NetParams<T>& params) {
  return {zero_block_tensors<T>(params.spec), zero_block_tensors<T>(params.spec), 0};
}

/// One bias-corrected Adam step over the trainable tensors. Blocks marked in
/// `frozen` keep their values (their moments are left untouched too).
template <class T>
void adam_step(NetParams<T>& params, const std::vector<BlockTensors<T>>& grads, AdamState<T>& state, double lr,
               const std::vector<bool>& frozen = {}, const AdamConfig& cfg = {}) {
  if (state.m.size() != params.blocks.size() || grads.size() != params.blocks.size())
    throw DimensionError("adam_step: state/gradient layout does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    if (b < frozen.size() && frozen[b]) continue;
    for (std::size_t t = 0; t < trainable_tensors(params.spec.blocks[b]); ++t) {
      auto& p = params.blocks[b][t].values();
      const auto& g = grads[b][t].values();
      auto& m = state.m[b][t].values();
      auto& v = state.v[b][t].values();
      if (g.size() != p.size()) throw DimensionError("adam_step: gradient size mismatch");
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1 - cfg.beta1) * gi;
        const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1 - cfg.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.epsilon));
      }
    }
  }
}

}  // namespace aefuse
