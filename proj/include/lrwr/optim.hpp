#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "lrwr/errors.hpp"
#include "lrwr/nn/tensor.hpp"

namespace lrwr {

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total_steps)) / 2
inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min) {
  if (total_steps < 1) throw DomainError("cosine_lr: total_steps must be >= 1");
  if (step > total_steps) throw DomainError("cosine_lr: step beyond total_steps");
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  friend bool operator==(const AdamOptions&, const AdamOptions&) = default;
};

template <typename T>
struct AdamState {
  nn::ParamSet<T> m;
  nn::ParamSet<T> v;
  std::size_t step = 0;

  static AdamState zeros_for(const nn::ParamSet<T>& params) {
    return {nn::zeros_like(params), nn::zeros_like(params), 0};
  }
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Bias-corrected Adam update applied in place.
template <typename T>
void adam_step(nn::ParamSet<T>& params, AdamState<T>& state, const nn::ParamSet<T>& grads, double lr,
               const AdamOptions& opt = {}) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw NumericError("adam_step: non-finite gradient in " + name);
    auto it = params.find(name);
    if (it == params.end() || it->second.shape != g.shape)
      throw ShapeError("adam_step: gradient " + name + " does not match parameters");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    const auto& g = grads.at(name).data;
    auto& m = state.m.at(name).data;
    auto& v = state.v.at(name).data;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = opt.beta1 * static_cast<double>(m[i]) + (1.0 - opt.beta1) * gi;
      const double vi = opt.beta2 * static_cast<double>(v[i]) + (1.0 - opt.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1, vhat = vi / bc2;
      p.data[i] = static_cast<T>(static_cast<double>(p.data[i]) - lr * mhat / (std::sqrt(vhat) + opt.eps));
    }
  }
}

/// Scales all gradients so their global L2 norm is at most max_norm.
template <typename T>
void clip_gradient_norm(nn::ParamSet<T>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (T v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const T scale = static_cast<T>(max_norm / norm);
  for (auto& [name, g] : grads)
    for (T& v : g.data) v *= scale;
}

}  // namespace lrwr
