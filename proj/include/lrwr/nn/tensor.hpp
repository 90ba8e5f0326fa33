#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lrwr/errors.hpp"

namespace lrwr::nn {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Dense parameter tensor with an explicit shape.
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, T fill = T(0)) : shape(std::move(s)), data(numel_of(shape), fill) {}

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
  std::size_t numel() const { return data.size(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  Eigen::Map<MatR<T>> mat(std::size_t rows, std::size_t cols) {
    return {data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
  }
  Eigen::Map<const MatR<T>> mat(std::size_t rows, std::size_t cols) const {
    return {data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
  }
  Eigen::Map<VecX<T>> vec() { return {data.data(), static_cast<Eigen::Index>(data.size())}; }
  Eigen::Map<const VecX<T>> vec() const { return {data.data(), static_cast<Eigen::Index>(data.size())}; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Named tensors, ordered by name.
template <typename T>
using ParamSet = std::map<std::string, Tensor<T>>;

template <typename T>
ParamSet<T> zeros_like(const ParamSet<T>& params) {
  ParamSet<T> out;
  for (const auto& [name, t] : params) out.emplace(name, Tensor<T>(t.shape));
  return out;
}

template <typename T>
std::size_t parameter_count(const ParamSet<T>& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

template <typename T>
void accumulate(ParamSet<T>& into, const ParamSet<T>& from) {
  for (auto& [name, t] : into) {
    const auto& src = from.at(name);
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] += src.data[i];
  }
}

template <typename To, typename From>
ParamSet<To> cast_params(const ParamSet<From>& params) {
  ParamSet<To> out;
  for (const auto& [name, t] : params) {
    Tensor<To> c(t.shape);
    for (std::size_t i = 0; i < t.data.size(); ++i) c.data[i] = static_cast<To>(t.data[i]);
    out.emplace(name, std::move(c));
  }
  return out;
}

/// Activation volume laid out channel-major: [C][T][H][W].
template <typename T>
struct Act {
  std::size_t c = 0, t = 0, h = 0, w = 0;
  std::vector<T> v;

  Act() = default;
  Act(std::size_t channels, std::size_t frames, std::size_t height, std::size_t width)
      : c(channels), t(frames), h(height), w(width), v(channels * frames * height * width, T(0)) {}

  std::size_t hw() const { return h * w; }
  std::size_t spatial() const { return t * h * w; }
  T* chan(std::size_t ch) { return v.data() + ch * spatial(); }
  const T* chan(std::size_t ch) const { return v.data() + ch * spatial(); }
  T* plane(std::size_t ch, std::size_t tt) { return v.data() + (ch * t + tt) * hw(); }
  const T* plane(std::size_t ch, std::size_t tt) const { return v.data() + (ch * t + tt) * hw(); }

  Eigen::Map<MatR<T>> mat() { return {v.data(), static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(spatial())}; }
  Eigen::Map<const MatR<T>> mat() const {
    return {v.data(), static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(spatial())};
  }
  bool same_shape(const Act& o) const { return c == o.c && t == o.t && h == o.h && w == o.w; }
};

}  // namespace lrwr::nn
