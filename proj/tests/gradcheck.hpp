#pragma once

// Central finite-difference oracle for the model gradient. Only uses
// forward_sample, never the backward pass it checks.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "lrwr/model.hpp"

namespace lrwr::test {

/// T=4, S=16, K=3, one block per stage, GRU hidden 8.
inline ALNConfig tiny_config() {
  ALNConfig cfg;
  cfg.input_size = 16;
  cfg.num_classes = 3;
  cfg.frontend_channels = 4;
  cfg.frontend_temporal_kernel = 3;
  cfg.frontend_spatial_kernel = 5;
  cfg.stage_widths = {4, 8};
  cfg.blocks_per_stage = {1, 1};
  cfg.radix = 2;
  cfg.rnn_hidden = 8;
  cfg.rnn_layers = 2;
  cfg.dropblock = {2, 0.2};
  return cfg;
}

/// Init plus uniform noise so no tensor sits at a degenerate point
/// (unit gammas, zero biases) where its gradient vanishes.
inline ParamSet<double> perturbed_params(const ALNConfig& cfg, std::uint64_t seed, double scale = 0.3) {
  auto p = init_params<double>(cfg, seed);
  Rng rng(seed ^ 0x9E3779B97F4A7C15ULL);
  for (auto& [name, t] : p)
    for (auto& v : t.data) v += rng.uniform(-scale, scale);
  return p;
}

struct GradCheckProblem {
  std::vector<double> input;
  LabelDistribution target;
  std::size_t frames = 4;
  std::uint64_t dropblock_seed = 0;
};

inline GradCheckProblem make_problem(const ALNConfig& cfg, std::size_t frames, std::uint64_t seed) {
  Rng rng(seed);
  GradCheckProblem pr;
  pr.frames = frames;
  pr.input.resize(frames * cfg.input_size * cfg.input_size);
  for (auto& v : pr.input) v = rng.uniform(-1.0, 1.0);
  pr.target.probs.resize(cfg.num_classes);
  double s = 0;
  for (auto& v : pr.target.probs) s += (v = rng.uniform(0.1, 1.0));
  for (auto& v : pr.target.probs) v /= s;
  pr.dropblock_seed = rng.next_u64();
  return pr;
}

inline double problem_loss(const ParamSet<double>& p, const ALNConfig& cfg, const GradCheckProblem& pr) {
  Rng rng(pr.dropblock_seed);
  const auto out = forward_sample<double>(p, cfg, pr.input, pr.frames, Mode::train, &rng, nullptr);
  double l = 0;
  for (std::size_t k = 0; k < cfg.num_classes; ++k) l -= pr.target.probs[k] * out.pooled(static_cast<Eigen::Index>(k));
  return l;
}

inline ParamSet<double> analytic_gradient(const ParamSet<double>& p, const ALNConfig& cfg, const GradCheckProblem& pr) {
  Rng rng(pr.dropblock_seed);
  ForwardCache<double> cache;
  forward_sample<double>(p, cfg, pr.input, pr.frames, Mode::train, &rng, &cache);
  auto grads = nn::zeros_like(p);
  backward_sample<double>(p, cfg, cache, loss_gradient<double>(pr.target, 1), grads);
  return grads;
}

inline ParamSet<double> numeric_gradient(ParamSet<double> p, const ALNConfig& cfg, const GradCheckProblem& pr,
                                         double h = 1e-6) {
  auto grads = nn::zeros_like(p);
  for (auto& [name, t] : p) {
    auto& g = grads.at(name);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const double orig = t.data[i];
      t.data[i] = orig + h;
      const double up = problem_loss(p, cfg, pr);
      t.data[i] = orig - h;
      const double down = problem_loss(p, cfg, pr);
      t.data[i] = orig;
      g.data[i] = (up - down) / (2 * h);
    }
  }
  return grads;
}

/// Relative error ||a - n|| / (||a|| + ||n||) per tensor.
inline std::map<std::string, double> gradient_check(const ParamSet<double>& p, const ALNConfig& cfg,
                                                    std::size_t frames, std::uint64_t seed) {
  const auto pr = make_problem(cfg, frames, seed);
  const auto a = analytic_gradient(p, cfg, pr);
  const auto n = numeric_gradient(p, cfg, pr);
  std::map<std::string, double> out;
  for (const auto& [name, ga] : a) {
    const auto& gn = n.at(name);
    double diff = 0, na = 0, nn_ = 0;
    for (std::size_t i = 0; i < ga.data.size(); ++i) {
      diff += (ga.data[i] - gn.data[i]) * (ga.data[i] - gn.data[i]);
      na += ga.data[i] * ga.data[i];
      nn_ += gn.data[i] * gn.data[i];
    }
    const double denom = std::sqrt(na) + std::sqrt(nn_);
    out[name] = denom < 1e-12 ? 0.0 : std::sqrt(diff) / denom;
  }
  return out;
}

}  // namespace lrwr::test
