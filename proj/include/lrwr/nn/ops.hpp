#pragma once

// Forward and backward kernels for the convolutional frontend and the
// split-attention stages. Activations use the [C][T][H][W] layout from
// tensor.hpp; backward functions accumulate (+=) into parameter gradients
// and overwrite input gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lrwr/nn/tensor.hpp"

namespace lrwr::nn {

// --- convolution -------------------------------------------------------------

/// Grouped 3D convolution without bias. A 2D per-frame convolution is the
/// kt = 1, st = 1, pt = 0 case.
struct ConvSpec {
  std::size_t cin = 1, cout = 1;
  std::size_t kt = 1, kh = 1, kw = 1;
  std::size_t st = 1, sh = 1, sw = 1;
  std::size_t pt = 0, ph = 0, pw = 0;
  std::size_t groups = 1;

  std::size_t cin_g() const { return cin / groups; }
  std::size_t cout_g() const { return cout / groups; }
  std::size_t rows() const { return cin_g() * kt * kh * kw; }
  std::vector<std::size_t> weight_shape() const { return {cout, cin_g(), kt, kh, kw}; }
  std::size_t out_t(std::size_t t) const { return (t + 2 * pt - kt) / st + 1; }
  std::size_t out_h(std::size_t h) const { return (h + 2 * ph - kh) / sh + 1; }
  std::size_t out_w(std::size_t w) const { return (w + 2 * pw - kw) / sw + 1; }
  bool pointwise() const {
    return kt == 1 && kh == 1 && kw == 1 && st == 1 && sh == 1 && sw == 1 && pt == 0 && ph == 0 && pw == 0;
  }
};

inline ConvSpec conv2d_spec(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride,
                            std::size_t groups = 1) {
  ConvSpec s;
  s.cin = cin;
  s.cout = cout;
  s.kh = s.kw = k;
  s.sh = s.sw = stride;
  s.ph = s.pw = k / 2;
  s.groups = groups;
  return s;
}

template <typename T>
void im2col(const Act<T>& x, const ConvSpec& s, std::size_t group, MatR<T>& cols) {
  const std::size_t ot = s.out_t(x.t), oh = s.out_h(x.h), ow = s.out_w(x.w);
  const std::size_t n = ot * oh * ow;
  cols.resize(static_cast<Eigen::Index>(s.rows()), static_cast<Eigen::Index>(n));
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < s.cin_g(); ++ci) {
    const T* src = x.chan(group * s.cin_g() + ci);
    for (std::size_t a = 0; a < s.kt; ++a)
      for (std::size_t b = 0; b < s.kh; ++b)
        for (std::size_t c = 0; c < s.kw; ++c, ++row) {
          T* dst = cols.data() + row * n;
          for (std::size_t t = 0; t < ot; ++t) {
            const auto it = static_cast<std::ptrdiff_t>(t * s.st + a) - static_cast<std::ptrdiff_t>(s.pt);
            for (std::size_t y = 0; y < oh; ++y) {
              const auto iy = static_cast<std::ptrdiff_t>(y * s.sh + b) - static_cast<std::ptrdiff_t>(s.ph);
              T* d = dst + (t * oh + y) * ow;
              if (it < 0 || it >= static_cast<std::ptrdiff_t>(x.t) || iy < 0 ||
                  iy >= static_cast<std::ptrdiff_t>(x.h)) {
                std::fill(d, d + ow, T(0));
                continue;
              }
              const T* srow = src + (static_cast<std::size_t>(it) * x.h + static_cast<std::size_t>(iy)) * x.w;
              for (std::size_t xx = 0; xx < ow; ++xx) {
                const auto ix = static_cast<std::ptrdiff_t>(xx * s.sw + c) - static_cast<std::ptrdiff_t>(s.pw);
                d[xx] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(x.w)) ? T(0) : srow[ix];
              }
            }
          }
        }
  }
}

template <typename T>
void col2im(const MatR<T>& cols, const ConvSpec& s, std::size_t group, Act<T>& dx) {
  const std::size_t ot = s.out_t(dx.t), oh = s.out_h(dx.h), ow = s.out_w(dx.w);
  const std::size_t n = ot * oh * ow;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < s.cin_g(); ++ci) {
    T* dst = dx.chan(group * s.cin_g() + ci);
    for (std::size_t a = 0; a < s.kt; ++a)
      for (std::size_t b = 0; b < s.kh; ++b)
        for (std::size_t c = 0; c < s.kw; ++c, ++row) {
          const T* src = cols.data() + row * n;
          for (std::size_t t = 0; t < ot; ++t) {
            const auto it = static_cast<std::ptrdiff_t>(t * s.st + a) - static_cast<std::ptrdiff_t>(s.pt);
            if (it < 0 || it >= static_cast<std::ptrdiff_t>(dx.t)) continue;
            for (std::size_t y = 0; y < oh; ++y) {
              const auto iy = static_cast<std::ptrdiff_t>(y * s.sh + b) - static_cast<std::ptrdiff_t>(s.ph);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(dx.h)) continue;
              const T* srow = src + (t * oh + y) * ow;
              T* drow = dst + (static_cast<std::size_t>(it) * dx.h + static_cast<std::size_t>(iy)) * dx.w;
              for (std::size_t xx = 0; xx < ow; ++xx) {
                const auto ix = static_cast<std::ptrdiff_t>(xx * s.sw + c) - static_cast<std::ptrdiff_t>(s.pw);
                if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(dx.w)) drow[ix] += srow[xx];
              }
            }
          }
        }
  }
}

template <typename T>
Act<T> conv_forward(const Act<T>& x, const Tensor<T>& weight, const ConvSpec& s) {
  if (x.c != s.cin) throw ShapeError("conv: expected " + std::to_string(s.cin) + " input channels, got " +
                                     std::to_string(x.c));
  if (x.t + 2 * s.pt < s.kt || x.h + 2 * s.ph < s.kh || x.w + 2 * s.pw < s.kw)
    throw ShapeError("conv: input smaller than kernel");
  Act<T> y(s.cout, s.out_t(x.t), s.out_h(x.h), s.out_w(x.w));
  const auto n = static_cast<Eigen::Index>(y.spatial());
  const auto cg = static_cast<Eigen::Index>(s.cout_g());
  const auto rows = static_cast<Eigen::Index>(s.rows());
  const auto w = weight.mat(s.cout, s.rows());
  if (s.pointwise()) {
    for (std::size_t g = 0; g < s.groups; ++g) {
      Eigen::Map<const MatR<T>> xin(x.chan(g * s.cin_g()), rows, n);
      Eigen::Map<MatR<T>>(y.chan(g * s.cout_g()), cg, n).noalias() =
          w.block(static_cast<Eigen::Index>(g) * cg, 0, cg, rows) * xin;
    }
    return y;
  }
  MatR<T> cols;
  for (std::size_t g = 0; g < s.groups; ++g) {
    im2col(x, s, g, cols);
    Eigen::Map<MatR<T>>(y.chan(g * s.cout_g()), cg, n).noalias() =
        w.block(static_cast<Eigen::Index>(g) * cg, 0, cg, rows) * cols;
  }
  return y;
}

/// dx may be null when the input gradient is not needed.
template <typename T>
void conv_backward(const Act<T>& x, const Tensor<T>& weight, const ConvSpec& s, const Act<T>& dy, Tensor<T>& dweight,
                   Act<T>* dx) {
  const auto n = static_cast<Eigen::Index>(dy.spatial());
  const auto cg = static_cast<Eigen::Index>(s.cout_g());
  const auto rows = static_cast<Eigen::Index>(s.rows());
  const auto w = weight.mat(s.cout, s.rows());
  auto dw = dweight.mat(s.cout, s.rows());
  if (dx) *dx = Act<T>(x.c, x.t, x.h, x.w);
  MatR<T> cols;
  for (std::size_t g = 0; g < s.groups; ++g) {
    Eigen::Map<const MatR<T>> dyg(dy.chan(g * s.cout_g()), cg, n);
    const auto wg = w.block(static_cast<Eigen::Index>(g) * cg, 0, cg, rows);
    if (s.pointwise()) {
      Eigen::Map<const MatR<T>> xin(x.chan(g * s.cin_g()), rows, n);
      dw.block(static_cast<Eigen::Index>(g) * cg, 0, cg, rows).noalias() += dyg * xin.transpose();
      if (dx) Eigen::Map<MatR<T>>(dx->chan(g * s.cin_g()), rows, n).noalias() = wg.transpose() * dyg;
      continue;
    }
    im2col(x, s, g, cols);
    dw.block(static_cast<Eigen::Index>(g) * cg, 0, cg, rows).noalias() += dyg * cols.transpose();
    if (dx) {
      MatR<T> dcols = wg.transpose() * dyg;
      col2im(dcols, s, g, *dx);
    }
  }
}

// --- normalization -------------------------------------------------------------

inline constexpr double kNormEps = 1e-5;

/// Per-sample, per-channel normalization over (T, H, W) with a per-channel
/// affine. Statistics never mix samples, so train and eval behave
/// identically.
template <typename T>
struct NormCache {
  Act<T> xhat;
  std::vector<T> inv_std;  // per channel
};

template <typename T>
Act<T> norm_forward(const Act<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, NormCache<T>* cache) {
  Act<T> y(x.c, x.t, x.h, x.w);
  Act<T> xhat(x.c, x.t, x.h, x.w);
  std::vector<T> inv_std(x.c);
  const std::size_t n = x.t * x.hw();
  for (std::size_t c = 0; c < x.c; ++c) {
    const T* p = x.v.data() + c * n;
    T mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += p[i];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
    inv_std[c] = is;
    T* xh = xhat.v.data() + c * n;
    T* q = y.v.data() + c * n;
    const T g = gamma.data[c], b = beta.data[c];
    for (std::size_t i = 0; i < n; ++i) {
      xh[i] = (p[i] - mean) * is;
      q[i] = g * xh[i] + b;
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
Act<T> norm_backward(const Act<T>& dy, const NormCache<T>& cache, const Tensor<T>& gamma, Tensor<T>& dgamma,
                     Tensor<T>& dbeta) {
  Act<T> dx(dy.c, dy.t, dy.h, dy.w);
  const std::size_t n = dy.t * dy.hw();
  const T count = static_cast<T>(n);
  for (std::size_t c = 0; c < dy.c; ++c) {
    const T* d = dy.v.data() + c * n;
    const T* xh = cache.xhat.v.data() + c * n;
    T dg = 0, db = 0;
    for (std::size_t i = 0; i < n; ++i) {
      dg += d[i] * xh[i];
      db += d[i];
    }
    dgamma.data[c] += dg;
    dbeta.data[c] += db;
    const T g = gamma.data[c], is = cache.inv_std[c];
    T* o = dx.v.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) o[i] = g * is / count * (count * d[i] - db - xh[i] * dg);
  }
  return dx;
}

// --- elementwise -------------------------------------------------------------

template <typename T>
void relu_inplace(Act<T>& x) {
  for (auto& v : x.v) v = std::max(v, T(0));
}

/// Masks dy by (y > 0) in place.
template <typename T>
void relu_backward_inplace(Act<T>& dy, const Act<T>& y) {
  for (std::size_t i = 0; i < dy.v.size(); ++i)
    if (!(y.v[i] > T(0))) dy.v[i] = T(0);
}

/// Mean over H, W per (channel, frame): [C][T][H][W] -> [C][T].
template <typename T>
MatR<T> spatial_mean(const Act<T>& x) {
  MatR<T> out(static_cast<Eigen::Index>(x.c), static_cast<Eigen::Index>(x.t));
  const T inv = T(1) / static_cast<T>(x.hw());
  for (std::size_t c = 0; c < x.c; ++c)
    for (std::size_t t = 0; t < x.t; ++t) {
      const T* p = x.plane(c, t);
      T s = 0;
      for (std::size_t i = 0; i < x.hw(); ++i) s += p[i];
      out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(t)) = s * inv;
    }
  return out;
}

/// Adds d/dx of spatial_mean into dx.
template <typename T>
void spatial_mean_backward(const MatR<T>& dmean, Act<T>& dx) {
  const T inv = T(1) / static_cast<T>(dx.hw());
  for (std::size_t c = 0; c < dx.c; ++c)
    for (std::size_t t = 0; t < dx.t; ++t) {
      T* p = dx.plane(c, t);
      const T g = dmean(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(t)) * inv;
      for (std::size_t i = 0; i < dx.hw(); ++i) p[i] += g;
    }
}

/// Column-wise log-softmax of a [K][T] matrix.
template <typename T>
MatR<T> log_softmax_columns(const MatR<T>& logits) {
  MatR<T> out(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.cols(); ++t) {
    const T m = logits.col(t).maxCoeff();
    T s = 0;
    for (Eigen::Index k = 0; k < logits.rows(); ++k) s += std::exp(logits(k, t) - m);
    const T lse = m + std::log(s);
    for (Eigen::Index k = 0; k < logits.rows(); ++k) out(k, t) = logits(k, t) - lse;
  }
  return out;
}

/// Gradient through a column-wise log-softmax given its output.
template <typename T>
MatR<T> log_softmax_columns_backward(const MatR<T>& dout, const MatR<T>& log_probs) {
  MatR<T> d(dout.rows(), dout.cols());
  for (Eigen::Index t = 0; t < dout.cols(); ++t) {
    const T s = dout.col(t).sum();
    for (Eigen::Index k = 0; k < dout.rows(); ++k) d(k, t) = dout(k, t) - std::exp(log_probs(k, t)) * s;
  }
  return d;
}

}  // namespace lrwr::nn
