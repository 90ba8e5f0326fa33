#pragma once

// AttentionLipreadingNet at configurable scale.
//
//   input [1][T][S][S]
//   -> 3D conv (temporal x spatial kernel, spatial stride 2) -> norm -> ReLU
//   -> residual stages of split-attention bottleneck blocks, run per frame
//   -> spatial mean per frame                            [C][T]
//   -> stacked (bi)directional GRU                        [H or 2H][T]
//   -> per-frame linear -> log-softmax                    [K][T]
//   -> mean over frames                                   [K]
//
// DropBlock multiplies each stage output in train mode.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lrwr/augment.hpp"
#include "lrwr/errors.hpp"
#include "lrwr/nn/gru.hpp"
#include "lrwr/nn/ops.hpp"
#include "lrwr/nn/tensor.hpp"
#include "lrwr/rng.hpp"

namespace lrwr {

using nn::Act;
using nn::MatR;
using nn::ParamSet;
using nn::Tensor;
using nn::VecX;

struct DropBlockSpec {
  std::size_t block_size = 3;
  double drop_rate = 0.1;
  friend bool operator==(const DropBlockSpec&, const DropBlockSpec&) = default;
};

struct ALNConfig {
  std::size_t input_size = 88;
  std::size_t num_classes = 0;
  std::size_t frontend_channels = 64;
  std::size_t frontend_temporal_kernel = 5;
  std::size_t frontend_spatial_kernel = 7;
  std::vector<std::size_t> stage_widths = {64, 128, 256, 512};
  std::vector<std::size_t> blocks_per_stage = {2, 2, 2, 2};
  std::size_t radix = 2;
  std::size_t rnn_hidden = 512;
  std::size_t rnn_layers = 2;
  bool bidirectional = true;
  DropBlockSpec dropblock;

  std::size_t directions() const { return bidirectional ? 2 : 1; }

  /// Hidden width of the split-attention gating MLP for a stage.
  std::size_t attention_width(std::size_t stage) const {
    return std::max<std::size_t>(stage_widths[stage] * radix / 4, 4);
  }

  void validate() const {
    if (num_classes < 2) throw DomainError("ALNConfig: num_classes must be >= 2");
    if (input_size < 4) throw DomainError("ALNConfig: input_size must be >= 4");
    if (frontend_channels == 0 || frontend_temporal_kernel == 0 || frontend_spatial_kernel == 0)
      throw DomainError("ALNConfig: frontend sizes must be positive");
    if (frontend_temporal_kernel % 2 == 0 || frontend_spatial_kernel % 2 == 0)
      throw DomainError("ALNConfig: frontend kernels must be odd");
    if (stage_widths.empty() || stage_widths.size() != blocks_per_stage.size())
      throw DomainError("ALNConfig: stage_widths and blocks_per_stage must be non-empty and equally long");
    if (radix < 1) throw DomainError("ALNConfig: radix must be >= 1");
    for (std::size_t i = 0; i < stage_widths.size(); ++i) {
      if (stage_widths[i] == 0 || blocks_per_stage[i] == 0)
        throw DomainError("ALNConfig: stage widths and block counts must be positive");
      if (stage_widths[i] % radix != 0) throw DomainError("ALNConfig: stage widths must be divisible by radix");
    }
    if (rnn_hidden == 0 || rnn_layers == 0) throw DomainError("ALNConfig: rnn_hidden and rnn_layers must be > 0");
    if (dropblock.block_size == 0) throw DomainError("ALNConfig: dropblock block_size must be >= 1");
    if (!(dropblock.drop_rate >= 0.0 && dropblock.drop_rate < 1.0))
      throw DomainError("ALNConfig: dropblock drop_rate must be in [0, 1)");
  }

  friend bool operator==(const ALNConfig&, const ALNConfig&) = default;
};

enum class Mode { train, eval };

namespace detail {

inline std::string block_name(std::size_t stage, std::size_t block) {
  return "stage" + std::to_string(stage) + ".block" + std::to_string(block);
}

inline std::string rnn_name(std::size_t layer, std::size_t dir) {
  return "rnn.l" + std::to_string(layer) + (dir == 0 ? ".fwd" : ".bwd");
}

inline nn::ConvSpec frontend_spec(const ALNConfig& cfg) {
  nn::ConvSpec s;
  s.cin = 1;
  s.cout = cfg.frontend_channels;
  s.kt = cfg.frontend_temporal_kernel;
  s.kh = s.kw = cfg.frontend_spatial_kernel;
  s.st = 1;
  s.sh = s.sw = 2;
  s.pt = s.kt / 2;
  s.ph = s.pw = s.kh / 2;
  return s;
}

struct BlockShape {
  std::size_t in = 0, width = 0, stride = 1, radix = 1, attn = 4;
  bool shortcut = false;
};

inline BlockShape block_shape(const ALNConfig& cfg, std::size_t stage, std::size_t block) {
  BlockShape b;
  b.in = block == 0 ? (stage == 0 ? cfg.frontend_channels : cfg.stage_widths[stage - 1]) : cfg.stage_widths[stage];
  b.width = cfg.stage_widths[stage];
  b.stride = (block == 0 && stage > 0) ? 2 : 1;
  b.radix = cfg.radix;
  b.attn = cfg.attention_width(stage);
  b.shortcut = block == 0 && (b.stride != 1 || b.in != b.width);
  return b;
}

}  // namespace detail

/// Parameter shapes in creation order.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> parameter_shapes(const ALNConfig& cfg) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  const auto norm = [&](const std::string& n, std::size_t c) {
    out.push_back({n + ".gamma", {c}});
    out.push_back({n + ".beta", {c}});
  };
  out.push_back({"frontend.conv.weight", detail::frontend_spec(cfg).weight_shape()});
  norm("frontend.norm", cfg.frontend_channels);
  for (std::size_t i = 0; i < cfg.stage_widths.size(); ++i) {
    for (std::size_t j = 0; j < cfg.blocks_per_stage[i]; ++j) {
      const auto b = detail::block_shape(cfg, i, j);
      const auto p = detail::block_name(i, j);
      out.push_back({p + ".conv1.weight", nn::conv2d_spec(b.in, b.width, 1, 1).weight_shape()});
      norm(p + ".norm1", b.width);
      out.push_back({p + ".splat.conv.weight",
                     nn::conv2d_spec(b.width, b.width * b.radix, 3, b.stride, b.radix).weight_shape()});
      norm(p + ".splat.norm", b.width * b.radix);
      out.push_back({p + ".splat.fc1.weight", {b.attn, b.width}});
      out.push_back({p + ".splat.fc1.bias", {b.attn}});
      out.push_back({p + ".splat.fc2.weight", {b.width * b.radix, b.attn}});
      out.push_back({p + ".splat.fc2.bias", {b.width * b.radix}});
      out.push_back({p + ".conv3.weight", nn::conv2d_spec(b.width, b.width, 1, 1).weight_shape()});
      norm(p + ".norm3", b.width);
      if (b.shortcut) {
        out.push_back({p + ".shortcut.conv.weight", nn::conv2d_spec(b.in, b.width, 1, b.stride).weight_shape()});
        norm(p + ".shortcut.norm", b.width);
      }
    }
  }
  const std::size_t H = cfg.rnn_hidden;
  for (std::size_t l = 0; l < cfg.rnn_layers; ++l) {
    const std::size_t in = l == 0 ? cfg.stage_widths.back() : H * cfg.directions();
    for (std::size_t d = 0; d < cfg.directions(); ++d) {
      const auto p = detail::rnn_name(l, d);
      out.push_back({p + ".w_ih", {3 * H, in}});
      out.push_back({p + ".w_hh", {3 * H, H}});
      out.push_back({p + ".b_ih", {3 * H}});
      out.push_back({p + ".b_hh", {3 * H}});
    }
  }
  out.push_back({"head.weight", {cfg.num_classes, H * cfg.directions()}});
  out.push_back({"head.bias", {cfg.num_classes}});
  return out;
}

/// Number of recurrent-backend parameters implied by the configuration.
inline std::size_t recurrent_parameter_count(const ALNConfig& cfg) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < cfg.rnn_layers; ++l) {
    const std::size_t in = l == 0 ? cfg.stage_widths.back() : cfg.rnn_hidden * cfg.directions();
    n += cfg.directions() * nn::gru_parameter_count(in, cfg.rnn_hidden);
  }
  return n;
}

/// Fan-in scaled initialization. Convolutions use He-normal, recurrent and
/// classifier weights uniform in +-1/sqrt(fan_in), norms start as identity,
/// biases at zero.
template <typename T>
ParamSet<T> init_params(const ALNConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamSet<T> params;
  const auto ends_with = [](const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (auto& [name, shape] : parameter_shapes(cfg)) {
    Tensor<T> t(shape);
    const std::size_t fan_in = shape.size() > 1 ? t.numel() / shape[0] : 1;
    if (ends_with(name, ".gamma")) {
      std::ranges::fill(t.data, T(1));
    } else if (ends_with(name, ".beta") || ends_with(name, ".bias")) {
      // zero
    } else if (name.starts_with("rnn.")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.rnn_hidden));
      for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
    } else if (name.starts_with("head.") || ends_with(name, "fc2.weight")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
    } else {
      const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& v : t.data) v = static_cast<T>(std_dev * rng.normal());
    }
    params.emplace(name, std::move(t));
  }
  return params;
}

// --- forward / backward ------------------------------------------------------

template <typename T>
struct BlockCache {
  Act<T> x;
  nn::NormCache<T> norm1;
  Act<T> r1;
  nn::NormCache<T> splat_norm;
  Act<T> u;  // branch features after norm + ReLU, [radix * width]
  MatR<T> gap, fc1, fc1_relu, att;
  Act<T> o;  // attention-weighted sum, [width]
  nn::NormCache<T> norm3;
  nn::NormCache<T> shortcut_norm;
  Act<T> y;
};

template <typename T>
struct ForwardCache {
  Act<T> input;
  nn::NormCache<T> frontend_norm;
  Act<T> frontend_out;
  std::vector<std::vector<BlockCache<T>>> blocks;
  std::vector<Act<T>> dropblock_scale;  // per stage, empty when inactive
  std::vector<Act<T>> stage_out;        // per stage, after DropBlock
  std::vector<std::vector<nn::GruCache<T>>> rnn;
  std::vector<MatR<T>> rnn_in;
  MatR<T> head_in;
  MatR<T> log_probs;
};

template <typename T>
struct SampleOutput {
  MatR<T> log_probs;  // [K][T]
  VecX<T> pooled;     // [K]
};

namespace detail {

template <typename T>
const Tensor<T>& P(const ParamSet<T>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ShapeError("missing parameter " + name);
  return it->second;
}

template <typename T>
Tensor<T>& G(ParamSet<T>& g, const std::string& name) {
  return g.at(name);
}

/// Split attention over radix branches, one gate vector per frame.
template <typename T>
Act<T> split_attention_forward(const Act<T>& u, const ParamSet<T>& p, const std::string& pre, const BlockShape& b,
                               BlockCache<T>* c) {
  const std::size_t W = b.width, R = b.radix;
  Act<T> gap_act(W, u.t, u.h, u.w);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t i = 0; i < W * u.spatial(); ++i) gap_act.v[i] += u.v[r * W * u.spatial() + i];
  MatR<T> gap = nn::spatial_mean(gap_act);  // [W][T]
  MatR<T> fc1 = P(p, pre + ".fc1.weight").mat(b.attn, W) * gap;
  fc1.colwise() += P(p, pre + ".fc1.bias").vec();
  MatR<T> fc1_relu = fc1.cwiseMax(T(0));
  MatR<T> logits = P(p, pre + ".fc2.weight").mat(W * R, b.attn) * fc1_relu;
  logits.colwise() += P(p, pre + ".fc2.bias").vec();
  // Softmax over the radix index for each (channel, frame).
  MatR<T> att(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.cols(); ++t)
    for (std::size_t ch = 0; ch < W; ++ch) {
      T m = logits(static_cast<Eigen::Index>(ch), t);
      for (std::size_t r = 1; r < R; ++r) m = std::max(m, logits(static_cast<Eigen::Index>(r * W + ch), t));
      T s = 0;
      for (std::size_t r = 0; r < R; ++r) s += std::exp(logits(static_cast<Eigen::Index>(r * W + ch), t) - m);
      for (std::size_t r = 0; r < R; ++r) {
        const auto idx = static_cast<Eigen::Index>(r * W + ch);
        att(idx, t) = std::exp(logits(idx, t) - m) / s;
      }
    }
  Act<T> o(W, u.t, u.h, u.w);
  for (std::size_t ch = 0; ch < W; ++ch)
    for (std::size_t t = 0; t < u.t; ++t) {
      T* dst = o.plane(ch, t);
      for (std::size_t r = 0; r < R; ++r) {
        const T a = att(static_cast<Eigen::Index>(r * W + ch), static_cast<Eigen::Index>(t));
        const T* src = u.plane(r * W + ch, t);
        for (std::size_t i = 0; i < u.hw(); ++i) dst[i] += a * src[i];
      }
    }
  if (c) {
    c->gap = std::move(gap);
    c->fc1 = std::move(fc1);
    c->fc1_relu = std::move(fc1_relu);
    c->att = std::move(att);
  }
  return o;
}

template <typename T>
Act<T> split_attention_backward(const Act<T>& dout, const BlockCache<T>& c, const ParamSet<T>& p, ParamSet<T>& g,
                                const std::string& pre, const BlockShape& b) {
  const std::size_t W = b.width, R = b.radix;
  const Act<T>& u = c.u;
  Act<T> du(u.c, u.t, u.h, u.w);
  MatR<T> datt(c.att.rows(), c.att.cols());
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t ch = 0; ch < W; ++ch)
      for (std::size_t t = 0; t < u.t; ++t) {
        const auto idx = static_cast<Eigen::Index>(r * W + ch);
        const T a = c.att(idx, static_cast<Eigen::Index>(t));
        const T* d = dout.plane(ch, t);
        const T* src = u.plane(r * W + ch, t);
        T* dst = du.plane(r * W + ch, t);
        T acc = 0;
        for (std::size_t i = 0; i < u.hw(); ++i) {
          acc += d[i] * src[i];
          dst[i] = a * d[i];
        }
        datt(idx, static_cast<Eigen::Index>(t)) = acc;
      }
  MatR<T> dlogits(datt.rows(), datt.cols());
  for (Eigen::Index t = 0; t < datt.cols(); ++t)
    for (std::size_t ch = 0; ch < W; ++ch) {
      T dot = 0;
      for (std::size_t r = 0; r < R; ++r) {
        const auto idx = static_cast<Eigen::Index>(r * W + ch);
        dot += c.att(idx, t) * datt(idx, t);
      }
      for (std::size_t r = 0; r < R; ++r) {
        const auto idx = static_cast<Eigen::Index>(r * W + ch);
        dlogits(idx, t) = c.att(idx, t) * (datt(idx, t) - dot);
      }
    }
  G(g, pre + ".fc2.weight").mat(W * R, b.attn).noalias() += dlogits * c.fc1_relu.transpose();
  G(g, pre + ".fc2.bias").vec() += dlogits.rowwise().sum();
  MatR<T> dfc1 = P(p, pre + ".fc2.weight").mat(W * R, b.attn).transpose() * dlogits;
  for (Eigen::Index i = 0; i < dfc1.size(); ++i)
    if (!(c.fc1.data()[i] > T(0))) dfc1.data()[i] = T(0);
  G(g, pre + ".fc1.weight").mat(b.attn, W).noalias() += dfc1 * c.gap.transpose();
  G(g, pre + ".fc1.bias").vec() += dfc1.rowwise().sum();
  MatR<T> dgap = P(p, pre + ".fc1.weight").mat(b.attn, W).transpose() * dfc1;
  // Every branch feeds the pooled sum.
  Act<T> dgap_act(W, u.t, u.h, u.w);
  nn::spatial_mean_backward(dgap, dgap_act);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t i = 0; i < W * u.spatial(); ++i) du.v[r * W * u.spatial() + i] += dgap_act.v[i];
  return du;
}

template <typename T>
Act<T> block_forward(const Act<T>& x, const ParamSet<T>& p, const BlockShape& b, const std::string& pre,
                     BlockCache<T>* c) {
  const auto s1 = nn::conv2d_spec(b.in, b.width, 1, 1);
  const auto ss = nn::conv2d_spec(b.width, b.width * b.radix, 3, b.stride, b.radix);
  const auto s3 = nn::conv2d_spec(b.width, b.width, 1, 1);
  Act<T> r1 = nn::norm_forward(nn::conv_forward(x, P(p, pre + ".conv1.weight"), s1), P(p, pre + ".norm1.gamma"),
                               P(p, pre + ".norm1.beta"), c ? &c->norm1 : nullptr);
  nn::relu_inplace(r1);
  Act<T> u = nn::norm_forward(nn::conv_forward(r1, P(p, pre + ".splat.conv.weight"), ss),
                              P(p, pre + ".splat.norm.gamma"), P(p, pre + ".splat.norm.beta"),
                              c ? &c->splat_norm : nullptr);
  nn::relu_inplace(u);
  Act<T> o = split_attention_forward(u, p, pre + ".splat", b, c);
  Act<T> y = nn::norm_forward(nn::conv_forward(o, P(p, pre + ".conv3.weight"), s3), P(p, pre + ".norm3.gamma"),
                              P(p, pre + ".norm3.beta"), c ? &c->norm3 : nullptr);
  if (b.shortcut) {
    const auto sc = nn::conv2d_spec(b.in, b.width, 1, b.stride);
    Act<T> s = nn::norm_forward(nn::conv_forward(x, P(p, pre + ".shortcut.conv.weight"), sc),
                                P(p, pre + ".shortcut.norm.gamma"), P(p, pre + ".shortcut.norm.beta"),
                                c ? &c->shortcut_norm : nullptr);
    for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += s.v[i];
  } else {
    for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += x.v[i];
  }
  nn::relu_inplace(y);
  if (c) {
    c->x = x;
    c->r1 = std::move(r1);
    c->u = std::move(u);
    c->o = std::move(o);
    c->y = y;
  }
  return y;
}

template <typename T>
Act<T> block_backward(Act<T> dy, const BlockCache<T>& c, const ParamSet<T>& p, ParamSet<T>& g, const BlockShape& b,
                      const std::string& pre) {
  const auto s1 = nn::conv2d_spec(b.in, b.width, 1, 1);
  const auto ss = nn::conv2d_spec(b.width, b.width * b.radix, 3, b.stride, b.radix);
  const auto s3 = nn::conv2d_spec(b.width, b.width, 1, 1);
  nn::relu_backward_inplace(dy, c.y);

  Act<T> dx;
  if (b.shortcut) {
    const auto sc = nn::conv2d_spec(b.in, b.width, 1, b.stride);
    Act<T> ds = nn::norm_backward(dy, c.shortcut_norm, P(p, pre + ".shortcut.norm.gamma"),
                                  G(g, pre + ".shortcut.norm.gamma"), G(g, pre + ".shortcut.norm.beta"));
    nn::conv_backward(c.x, P(p, pre + ".shortcut.conv.weight"), sc, ds, G(g, pre + ".shortcut.conv.weight"), &dx);
  } else {
    dx = dy;
  }

  Act<T> d3 = nn::norm_backward(dy, c.norm3, P(p, pre + ".norm3.gamma"), G(g, pre + ".norm3.gamma"),
                                G(g, pre + ".norm3.beta"));
  Act<T> d_o;
  nn::conv_backward(c.o, P(p, pre + ".conv3.weight"), s3, d3, G(g, pre + ".conv3.weight"), &d_o);
  Act<T> du = split_attention_backward(d_o, c, p, g, pre + ".splat", b);
  nn::relu_backward_inplace(du, c.u);
  Act<T> dus = nn::norm_backward(du, c.splat_norm, P(p, pre + ".splat.norm.gamma"), G(g, pre + ".splat.norm.gamma"),
                                 G(g, pre + ".splat.norm.beta"));
  Act<T> dr1;
  nn::conv_backward(c.r1, P(p, pre + ".splat.conv.weight"), ss, dus, G(g, pre + ".splat.conv.weight"), &dr1);
  nn::relu_backward_inplace(dr1, c.r1);
  Act<T> da1 = nn::norm_backward(dr1, c.norm1, P(p, pre + ".norm1.gamma"), G(g, pre + ".norm1.gamma"),
                                 G(g, pre + ".norm1.beta"));
  Act<T> dxm;
  nn::conv_backward(c.x, P(p, pre + ".conv1.weight"), s1, da1, G(g, pre + ".conv1.weight"), &dxm);
  for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dxm.v[i];
  return dx;
}

template <typename T>
nn::GruParams<T> gru_params(const ParamSet<T>& p, const std::string& pre) {
  return {&P(p, pre + ".w_ih"), &P(p, pre + ".w_hh"), &P(p, pre + ".b_ih"), &P(p, pre + ".b_hh")};
}

template <typename T>
nn::GruGrads<T> gru_grads(ParamSet<T>& g, const std::string& pre) {
  return {&G(g, pre + ".w_ih"), &G(g, pre + ".w_hh"), &G(g, pre + ".b_ih"), &G(g, pre + ".b_hh")};
}

}  // namespace detail

/// Runs one clip through the network. `input` is frames x S x S, already
/// normalized. In train mode `rng` drives DropBlock and must be non-null
/// when DropBlock is active. When `cache` is given, everything needed by
/// backward_sample is stored in it.
template <typename T>
SampleOutput<T> forward_sample(const ParamSet<T>& p, const ALNConfig& cfg, std::span<const T> input,
                               std::size_t frames, Mode mode, Rng* rng, ForwardCache<T>* cache) {
  const std::size_t S = cfg.input_size;
  if (frames == 0 || input.size() != frames * S * S)
    throw ShapeError("forward: expected " + std::to_string(frames) + "x" + std::to_string(S) + "x" +
                     std::to_string(S) + " input, got " + std::to_string(input.size()) + " values");
  const bool drop = mode == Mode::train && cfg.dropblock.drop_rate > 0.0;
  if (drop && !rng) throw DomainError("forward: train mode with DropBlock needs an rng");

  Act<T> x(1, frames, S, S);
  std::ranges::copy(input, x.v.begin());
  Act<T> cur = nn::norm_forward(nn::conv_forward(x, detail::P(p, "frontend.conv.weight"), detail::frontend_spec(cfg)),
                                detail::P(p, "frontend.norm.gamma"), detail::P(p, "frontend.norm.beta"),
                                cache ? &cache->frontend_norm : nullptr);
  nn::relu_inplace(cur);
  if (cache) {
    cache->input = std::move(x);
    cache->frontend_out = cur;
    cache->blocks.assign(cfg.stage_widths.size(), {});
    cache->dropblock_scale.assign(cfg.stage_widths.size(), {});
    cache->stage_out.assign(cfg.stage_widths.size(), {});
  }

  for (std::size_t i = 0; i < cfg.stage_widths.size(); ++i) {
    if (cache) cache->blocks[i].resize(cfg.blocks_per_stage[i]);
    for (std::size_t j = 0; j < cfg.blocks_per_stage[i]; ++j)
      cur = detail::block_forward(cur, p, detail::block_shape(cfg, i, j), detail::block_name(i, j),
                                  cache ? &cache->blocks[i][j] : nullptr);
    if (drop) {
      Act<T> scale(cur.c, cur.t, cur.h, cur.w);
      const std::size_t bs = std::min({cfg.dropblock.block_size, cur.h, cur.w});
      for (std::size_t c = 0; c < cur.c; ++c)
        for (std::size_t t = 0; t < cur.t; ++t) {
          const auto mask = dropblock_mask(cur.h, cur.w, bs, cfg.dropblock.drop_rate, *rng);
          const auto kept = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
          const T k = kept ? static_cast<T>(mask.size()) / static_cast<T>(kept) : T(0);
          T* s = scale.plane(c, t);
          for (std::size_t q = 0; q < mask.size(); ++q) s[q] = mask[q] ? k : T(0);
        }
      for (std::size_t q = 0; q < cur.v.size(); ++q) cur.v[q] *= scale.v[q];
      if (cache) cache->dropblock_scale[i] = std::move(scale);
    }
    if (cache) cache->stage_out[i] = cur;
  }

  MatR<T> seq = nn::spatial_mean(cur);
  if (cache) cache->rnn.assign(cfg.rnn_layers, {});
  for (std::size_t l = 0; l < cfg.rnn_layers; ++l) {
    if (cache) {
      cache->rnn_in.push_back(seq);
      cache->rnn[l].resize(cfg.directions());
    }
    MatR<T> out(static_cast<Eigen::Index>(cfg.rnn_hidden * cfg.directions()), seq.cols());
    for (std::size_t d = 0; d < cfg.directions(); ++d)
      out.middleRows(static_cast<Eigen::Index>(d * cfg.rnn_hidden), static_cast<Eigen::Index>(cfg.rnn_hidden)) =
          nn::gru_forward(seq, detail::gru_params(p, detail::rnn_name(l, d)), cfg.rnn_hidden, d == 1,
                          cache ? &cache->rnn[l][d] : nullptr);
    seq = std::move(out);
  }

  MatR<T> logits = detail::P(p, "head.weight").mat(cfg.num_classes, cfg.rnn_hidden * cfg.directions()) * seq;
  logits.colwise() += detail::P(p, "head.bias").vec();
  SampleOutput<T> out;
  out.log_probs = nn::log_softmax_columns(logits);
  out.pooled = out.log_probs.rowwise().mean();
  if (!out.pooled.allFinite()) throw NumericError("forward: non-finite activation in pooled log-probabilities");
  if (cache) {
    cache->head_in = std::move(seq);
    cache->log_probs = out.log_probs;
  }
  return out;
}

/// Accumulates d loss / d params into `grads` given d loss / d pooled.
template <typename T>
void backward_sample(const ParamSet<T>& p, const ALNConfig& cfg, const ForwardCache<T>& c, const VecX<T>& dpooled,
                     ParamSet<T>& grads) {
  const auto steps = c.log_probs.cols();
  MatR<T> dlp(c.log_probs.rows(), steps);
  for (Eigen::Index t = 0; t < steps; ++t) dlp.col(t) = dpooled / static_cast<T>(steps);
  MatR<T> dlogits = nn::log_softmax_columns_backward(dlp, c.log_probs);
  const std::size_t feat = cfg.rnn_hidden * cfg.directions();
  grads.at("head.weight").mat(cfg.num_classes, feat).noalias() += dlogits * c.head_in.transpose();
  grads.at("head.bias").vec() += dlogits.rowwise().sum();
  MatR<T> dseq = detail::P(p, "head.weight").mat(cfg.num_classes, feat).transpose() * dlogits;

  for (std::size_t l = cfg.rnn_layers; l-- > 0;) {
    MatR<T> dx = MatR<T>::Zero(c.rnn_in[l].rows(), steps);
    for (std::size_t d = 0; d < cfg.directions(); ++d) {
      const auto name = detail::rnn_name(l, d);
      MatR<T> dout = dseq.middleRows(static_cast<Eigen::Index>(d * cfg.rnn_hidden),
                                     static_cast<Eigen::Index>(cfg.rnn_hidden));
      dx += nn::gru_backward(dout, c.rnn[l][d], detail::gru_params(p, name), detail::gru_grads(grads, name),
                             cfg.rnn_hidden);
    }
    dseq = std::move(dx);
  }

  const Act<T>& last = c.stage_out.back();
  Act<T> dcur(last.c, last.t, last.h, last.w);
  nn::spatial_mean_backward(dseq, dcur);
  for (std::size_t i = cfg.stage_widths.size(); i-- > 0;) {
    if (!c.dropblock_scale[i].v.empty())
      for (std::size_t q = 0; q < dcur.v.size(); ++q) dcur.v[q] *= c.dropblock_scale[i].v[q];
    for (std::size_t j = cfg.blocks_per_stage[i]; j-- > 0;)
      dcur = detail::block_backward(std::move(dcur), c.blocks[i][j], p, grads, detail::block_shape(cfg, i, j),
                                    detail::block_name(i, j));
  }
  nn::relu_backward_inplace(dcur, c.frontend_out);
  Act<T> dconv = nn::norm_backward(dcur, c.frontend_norm, detail::P(p, "frontend.norm.gamma"),
                                   grads.at("frontend.norm.gamma"), grads.at("frontend.norm.beta"));
  nn::conv_backward(c.input, detail::P(p, "frontend.conv.weight"), detail::frontend_spec(cfg), dconv,
                    grads.at("frontend.conv.weight"), static_cast<Act<T>*>(nullptr));
}

template <typename T>
struct BatchOutput {
  std::vector<SampleOutput<T>> samples;
  MatR<T> pooled;  // [B][K]
};

/// Batch forward; each sample is independent.
template <typename T>
BatchOutput<T> forward(const ParamSet<T>& p, const ALNConfig& cfg, std::span<const std::vector<T>> batch,
                       std::size_t frames, Mode mode, Rng* rng) {
  BatchOutput<T> out;
  out.pooled.resize(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(cfg.num_classes));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    out.samples.push_back(forward_sample<T>(p, cfg, batch[b], frames, mode, rng, nullptr));
    out.pooled.row(static_cast<Eigen::Index>(b)) = out.samples.back().pooled.transpose();
  }
  return out;
}

/// Mean over the batch of -<target, pooled log-probs>.
template <typename T>
double loss(const MatR<T>& pooled, std::span<const LabelDistribution> targets) {
  if (static_cast<std::size_t>(pooled.rows()) != targets.size())
    throw ShapeError("loss: batch size mismatch");
  if (targets.empty()) throw ShapeError("loss: empty batch");
  double total = 0.0;
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const auto& tgt = targets[b];
    if (tgt.size() != static_cast<std::size_t>(pooled.cols())) throw ShapeError("loss: class count mismatch");
    if (!tgt.is_valid()) throw DomainError("loss: target is not a probability distribution");
    for (std::size_t k = 0; k < tgt.size(); ++k)
      total -= tgt.probs[k] * static_cast<double>(pooled(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k)));
  }
  return total / static_cast<double>(targets.size());
}

/// d loss / d pooled for one sample of a batch of size batch_size.
template <typename T>
VecX<T> loss_gradient(const LabelDistribution& target, std::size_t batch_size) {
  VecX<T> g(static_cast<Eigen::Index>(target.size()));
  for (std::size_t k = 0; k < target.size(); ++k)
    g(static_cast<Eigen::Index>(k)) = static_cast<T>(-target.probs[k] / static_cast<double>(batch_size));
  return g;
}

struct Prediction {
  std::size_t class_id = 0;
  double confidence = 0.0;
};

/// Argmax of pooled log-probs; confidence is the softmax of the pooled vector.
template <typename T>
Prediction prediction_from_pooled(const VecX<T>& pooled) {
  Eigen::Index best = 0;
  pooled.maxCoeff(&best);
  double s = 0.0;
  for (Eigen::Index k = 0; k < pooled.size(); ++k) s += std::exp(static_cast<double>(pooled(k) - pooled(best)));
  return {static_cast<std::size_t>(best), 1.0 / s};
}

template <typename T>
Prediction predict(const ParamSet<T>& p, const ALNConfig& cfg, std::span<const T> input, std::size_t frames) {
  return prediction_from_pooled<T>(forward_sample<T>(p, cfg, input, frames, Mode::eval, nullptr, nullptr).pooled);
}

template <typename T>
Prediction predict(const ParamSet<T>& p, const ALNConfig& cfg, const Clip& clip) {
  const Clip c = (clip.height() == cfg.input_size && clip.width() == cfg.input_size)
                     ? clip
                     : center_crop(clip, cfg.input_size);
  const auto x = normalize_clip<T>(c);
  return predict<T>(p, cfg, std::span<const T>(x), c.frames());
}

}  // namespace lrwr
