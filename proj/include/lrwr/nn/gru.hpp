#pragma once

// Gated recurrent unit over a [D][T] feature sequence, one direction:
//
//   r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//   z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//   h' = (1 - z) * n + z * h
//
// Gate rows are stacked (r, z, n) in w_ih [3H x D], w_hh [3H x H],
// b_ih [3H], b_hh [3H]. Initial state is zero.

#include <cmath>
#include <vector>

#include "lrwr/nn/tensor.hpp"

namespace lrwr::nn {

template <typename T>
struct GruParams {
  const Tensor<T>* w_ih;
  const Tensor<T>* w_hh;
  const Tensor<T>* b_ih;
  const Tensor<T>* b_hh;
};

template <typename T>
struct GruGrads {
  Tensor<T>* w_ih;
  Tensor<T>* w_hh;
  Tensor<T>* b_ih;
  Tensor<T>* b_hh;
};

template <typename T>
struct GruCache {
  MatR<T> x;       // [D][T]
  MatR<T> h_prev;  // [H][T], state entering each step
  MatR<T> r, z, n, hn;  // gates and W_hn h + b_hn, [H][T]
  bool reverse = false;
};

/// Closed-form parameter count of one direction.
inline std::size_t gru_parameter_count(std::size_t input, std::size_t hidden) {
  return 3 * hidden * (input + hidden) + 6 * hidden;
}

template <typename T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

template <typename T>
MatR<T> gru_forward(const MatR<T>& x, const GruParams<T>& p, std::size_t hidden, bool reverse, GruCache<T>* cache) {
  const auto H = static_cast<Eigen::Index>(hidden);
  const Eigen::Index D = x.rows(), steps = x.cols();
  if (static_cast<Eigen::Index>(p.w_ih->shape.at(1)) != D) throw ShapeError("gru: input width mismatch");
  const auto wih = p.w_ih->mat(3 * hidden, static_cast<std::size_t>(D));
  const auto whh = p.w_hh->mat(3 * hidden, hidden);
  const auto bih = p.b_ih->vec();
  const auto bhh = p.b_hh->vec();

  MatR<T> gi = wih * x;
  gi.colwise() += bih;
  MatR<T> out(H, steps);
  MatR<T> r(H, steps), z(H, steps), n(H, steps), hn(H, steps), hp(H, steps);
  VecX<T> h = VecX<T>::Zero(H);
  for (Eigen::Index s = 0; s < steps; ++s) {
    const Eigen::Index t = reverse ? steps - 1 - s : s;
    VecX<T> gh = whh * h + bhh;
    hp.col(t) = h;
    for (Eigen::Index i = 0; i < H; ++i) {
      const T rr = sigmoid(gi(i, t) + gh(i));
      const T zz = sigmoid(gi(H + i, t) + gh(H + i));
      const T nn = std::tanh(gi(2 * H + i, t) + rr * gh(2 * H + i));
      r(i, t) = rr;
      z(i, t) = zz;
      n(i, t) = nn;
      hn(i, t) = gh(2 * H + i);
      h(i) = (T(1) - zz) * nn + zz * h(i);
    }
    out.col(t) = h;
  }
  if (cache) {
    cache->x = x;
    cache->h_prev = std::move(hp);
    cache->r = std::move(r);
    cache->z = std::move(z);
    cache->n = std::move(n);
    cache->hn = std::move(hn);
    cache->reverse = reverse;
  }
  return out;
}

/// Returns d loss / d x given d loss / d outputs.
template <typename T>
MatR<T> gru_backward(const MatR<T>& dout, const GruCache<T>& c, const GruParams<T>& p, const GruGrads<T>& g,
                     std::size_t hidden) {
  const auto H = static_cast<Eigen::Index>(hidden);
  const Eigen::Index D = c.x.rows(), steps = c.x.cols();
  const auto wih = p.w_ih->mat(3 * hidden, static_cast<std::size_t>(D));
  const auto whh = p.w_hh->mat(3 * hidden, hidden);
  MatR<T> dgi(3 * H, steps);
  MatR<T> dgh(3 * H, steps);
  VecX<T> dh = VecX<T>::Zero(H);
  for (Eigen::Index s = steps - 1; s >= 0; --s) {
    const Eigen::Index t = c.reverse ? steps - 1 - s : s;
    dh += dout.col(t);
    VecX<T> dh_prev(H);
    for (Eigen::Index i = 0; i < H; ++i) {
      const T rr = c.r(i, t), zz = c.z(i, t), nn = c.n(i, t), hprev = c.h_prev(i, t);
      const T dn = dh(i) * (T(1) - zz);
      const T dz = dh(i) * (hprev - nn);
      dh_prev(i) = dh(i) * zz;
      const T dan = dn * (T(1) - nn * nn);
      const T dr = dan * c.hn(i, t);
      const T dar = dr * rr * (T(1) - rr);
      const T daz = dz * zz * (T(1) - zz);
      dgi(i, t) = dar;
      dgi(H + i, t) = daz;
      dgi(2 * H + i, t) = dan;
      dgh(i, t) = dar;
      dgh(H + i, t) = daz;
      dgh(2 * H + i, t) = dan * rr;
    }
    dh = dh_prev + whh.transpose() * dgh.col(t);
  }
  g.w_ih->mat(3 * hidden, static_cast<std::size_t>(D)).noalias() += dgi * c.x.transpose();
  g.w_hh->mat(3 * hidden, hidden).noalias() += dgh * c.h_prev.transpose();
  g.b_ih->vec() += dgi.rowwise().sum();
  g.b_hh->vec() += dgh.rowwise().sum();
  return wih.transpose() * dgi;
}

}  // namespace lrwr::nn
