#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "sdr/tensor.hpp"

namespace sdr::ad {

struct AdamState {
  double lr = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update. grads[k] must match params[k] in length;
/// moments are kept in double regardless of T.
template <typename T>
void adam_step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads, AdamState& state) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: params/grads count differ");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
      state.m[k].assign(params[k].size(), 0.0);
      state.v[k].assign(params[k].size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: optimizer state does not match params");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    auto g = grads[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (g.size() != p.size() || m.size() != p.size()) throw std::invalid_argument("adam_step: shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double update = state.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
    }
  }
}

/// Adam over tensors, reading each tensor's accumulated gradient (missing
/// gradients count as zero).
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState& state) {
  std::vector<std::span<T>> ps;
  std::vector<std::vector<T>> zero_storage;
  std::vector<std::span<const T>> gs;
  zero_storage.reserve(params.size());
  for (auto& t : params) {
    ps.push_back(t.mutable_values());
    if (t.has_grad()) {
      gs.push_back(t.grad());
    } else {
      zero_storage.emplace_back(t.size(), T{0});
      gs.push_back(zero_storage.back());
    }
  }
  adam_step<T>(std::span<const std::span<T>>(ps), std::span<const std::span<const T>>(gs), state);
}

/// Reduce-on-plateau in "min" mode with a relative threshold.
struct PlateauScheduler {
  double factor = 0.5;
  int patience = 8;
  double threshold = 1e-6;
  double best_loss = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;
  double lr = 4e-4;

  /// Feeds one validation loss; returns the learning rate to use next.
  double step(double val_loss) {
    if (!std::isfinite(val_loss)) throw std::invalid_argument("scheduler needs a finite validation loss");
    if (val_loss < best_loss * (1.0 - threshold)) {
      best_loss = val_loss;
      epochs_since_improvement = 0;
    } else if (++epochs_since_improvement > patience) {
      lr *= factor;
      epochs_since_improvement = 0;
    }
    return lr;
  }
};

}  // namespace sdr::ad
