#pragma once

// Clip-level augmentations and label-space regularizers. Every random
// decision is drawn once per clip (or once per batch for MixUp) and applied
// identically to all frames.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "lrwr/clip.hpp"
#include "lrwr/errors.hpp"
#include "lrwr/rng.hpp"

namespace lrwr {

struct CutoutSpec {
  std::size_t n_holes = 0;
  std::size_t hole_size = 0;
  friend bool operator==(const CutoutSpec&, const CutoutSpec&) = default;
};

struct AugmentConfig {
  std::size_t crop_size = 88;
  double flip_prob = 0.5;
  std::optional<CutoutSpec> cutout;
  bool mixup = true;
  double mixup_alpha = 0.4;
  bool mixup_per_sample = false;
  double smoothing_eps = 0.1;
  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

struct LabelDistribution {
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
  double sum() const { return std::accumulate(probs.begin(), probs.end(), 0.0); }
  bool is_valid(double tol = 1e-6) const {
    return !probs.empty() && std::ranges::all_of(probs, [](double p) { return p >= 0.0 && std::isfinite(p); }) &&
           std::abs(sum() - 1.0) <= tol;
  }
};

inline LabelDistribution one_hot(std::size_t class_id, std::size_t num_classes) {
  if (class_id >= num_classes) throw DomainError("one_hot: class id out of range");
  LabelDistribution d{std::vector<double>(num_classes, 0.0)};
  d.probs[class_id] = 1.0;
  return d;
}

/// (1 - eps) * onehot + eps / K
inline LabelDistribution label_smooth(std::size_t class_id, std::size_t num_classes, double eps) {
  if (!(eps >= 0.0 && eps < 1.0)) throw DomainError("label_smooth: eps must be in [0, 1)");
  auto d = one_hot(class_id, num_classes);
  for (auto& p : d.probs) p = (1.0 - eps) * p + eps / static_cast<double>(num_classes);
  return d;
}

/// Smoothing applied to an arbitrary distribution (e.g. a MixUp target).
inline LabelDistribution label_smooth(const LabelDistribution& dist, double eps) {
  if (!(eps >= 0.0 && eps < 1.0)) throw DomainError("label_smooth: eps must be in [0, 1)");
  LabelDistribution d = dist;
  const double k = static_cast<double>(d.size());
  for (auto& p : d.probs) p = (1.0 - eps) * p + eps / k;
  return d;
}

inline Clip crop_at(const Clip& clip, std::size_t size, std::size_t dy, std::size_t dx) {
  if (dy + size > clip.height() || dx + size > clip.width()) throw ShapeError("crop: window outside clip");
  Clip out(clip.frames(), size, size);
  for (std::size_t t = 0; t < clip.frames(); ++t)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) out.at(t, y, x) = clip.at(t, dy + y, dx + x);
  return out;
}

/// One offset drawn per clip, shared by all frames.
inline Clip random_crop_consistent(const Clip& clip, std::size_t size, Rng& rng) {
  if (size == 0 || size > std::min(clip.height(), clip.width()))
    throw ShapeError("random_crop: size " + std::to_string(size) + " exceeds clip " +
                     std::to_string(clip.height()) + "x" + std::to_string(clip.width()));
  const auto dy = static_cast<std::size_t>(rng.uniform_int(clip.height() - size + 1));
  const auto dx = static_cast<std::size_t>(rng.uniform_int(clip.width() - size + 1));
  return crop_at(clip, size, dy, dx);
}

inline Clip center_crop(const Clip& clip, std::size_t size) {
  if (size == 0 || size > std::min(clip.height(), clip.width())) throw ShapeError("center_crop: size too large");
  return crop_at(clip, size, (clip.height() - size) / 2, (clip.width() - size) / 2);
}

inline Clip mirror(const Clip& clip) {
  Clip out = clip;
  for (std::size_t t = 0; t < clip.frames(); ++t)
    for (std::size_t y = 0; y < clip.height(); ++y)
      for (std::size_t x = 0; x < clip.width(); ++x) out.at(t, y, x) = clip.at(t, y, clip.width() - 1 - x);
  return out;
}

/// Mirrors every frame with probability p; one decision per clip.
inline Clip horizontal_flip(const Clip& clip, double p, Rng& rng) {
  return rng.bernoulli(p) ? mirror(clip) : clip;
}

/// Zeroes n_holes squares of side hole_size, positioned once per clip.
/// Hole centers are uniform over the frame; holes are clipped at borders.
inline Clip cutout(const Clip& clip, std::size_t n_holes, std::size_t hole_size, Rng& rng) {
  if (hole_size > std::min(clip.height(), clip.width())) throw ShapeError("cutout: hole larger than frame");
  Clip out = clip;
  const auto half = static_cast<std::ptrdiff_t>(hole_size / 2);
  for (std::size_t n = 0; n < n_holes; ++n) {
    const auto cy = static_cast<std::ptrdiff_t>(rng.uniform_int(clip.height()));
    const auto cx = static_cast<std::ptrdiff_t>(rng.uniform_int(clip.width()));
    const auto y0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, cy - half));
    const auto x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, cx - half));
    const auto y1 = std::min(clip.height(), static_cast<std::size_t>(cy - half + static_cast<std::ptrdiff_t>(hole_size)));
    const auto x1 = std::min(clip.width(), static_cast<std::size_t>(cx - half + static_cast<std::ptrdiff_t>(hole_size)));
    for (std::size_t t = 0; t < clip.frames(); ++t)
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) out.at(t, y, x) = 0;
  }
  return out;
}

/// Maps pixel values to [-1, 1] as (v - 127.5) / 127.5.
template <typename T>
std::vector<T> normalize_clip(const Clip& clip) {
  std::vector<T> out(clip.data().size());
  std::ranges::transform(clip.data(), out.begin(),
                         [](std::uint8_t v) { return static_cast<T>((static_cast<double>(v) - 127.5) / 127.5); });
  return out;
}

template <typename T>
struct MixedBatch {
  std::vector<std::vector<T>> inputs;
  std::vector<LabelDistribution> targets;
  std::vector<double> lambdas;  // one per sample
};

/// x = lam * a + (1 - lam) * b, target = lam * onehot(a) + (1 - lam) * onehot(b).
/// One lambda per sample in `lambdas`.
template <typename T>
MixedBatch<T> mixup_with_lambdas(std::span<const std::vector<T>> inputs_a, std::span<const int> labels_a,
                                 std::span<const std::vector<T>> inputs_b, std::span<const int> labels_b,
                                 std::size_t num_classes, std::span<const double> lambdas) {
  const std::size_t n = inputs_a.size();
  if (inputs_b.size() != n || labels_a.size() != n || labels_b.size() != n || lambdas.size() != n)
    throw ShapeError("mixup: batch sizes differ");
  MixedBatch<T> out;
  out.lambdas.assign(lambdas.begin(), lambdas.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (inputs_a[i].size() != inputs_b[i].size()) throw ShapeError("mixup: clip shapes differ");
    const double lam = lambdas[i];
    std::vector<T> x(inputs_a[i].size());
    for (std::size_t j = 0; j < x.size(); ++j)
      x[j] = static_cast<T>(lam * static_cast<double>(inputs_a[i][j]) +
                            (1.0 - lam) * static_cast<double>(inputs_b[i][j]));
    out.inputs.push_back(std::move(x));
    auto target = one_hot(static_cast<std::size_t>(labels_a[i]), num_classes);
    for (auto& p : target.probs) p *= lam;
    target.probs[static_cast<std::size_t>(labels_b[i])] += 1.0 - lam;
    out.targets.push_back(std::move(target));
  }
  return out;
}

template <typename T>
MixedBatch<T> mixup_with_lambda(std::span<const std::vector<T>> inputs_a, std::span<const int> labels_a,
                                std::span<const std::vector<T>> inputs_b, std::span<const int> labels_b,
                                std::size_t num_classes, double lambda) {
  const std::vector<double> lambdas(inputs_a.size(), lambda);
  return mixup_with_lambdas<T>(inputs_a, labels_a, inputs_b, labels_b, num_classes, lambdas);
}

/// MixUp with lambda ~ Beta(alpha, alpha), drawn once per batch unless
/// per_sample is set.
template <typename T>
MixedBatch<T> mixup(std::span<const std::vector<T>> inputs_a, std::span<const int> labels_a,
                    std::span<const std::vector<T>> inputs_b, std::span<const int> labels_b, std::size_t num_classes,
                    double alpha, Rng& rng, bool per_sample = false) {
  if (!(alpha > 0.0)) throw DomainError("mixup: alpha must be positive");
  std::vector<double> lambdas(inputs_a.size());
  if (per_sample) {
    for (auto& l : lambdas) l = rng.beta(alpha, alpha);
  } else {
    std::ranges::fill(lambdas, rng.beta(alpha, alpha));
  }
  return mixup_with_lambdas<T>(inputs_a, labels_a, inputs_b, labels_b, num_classes, lambdas);
}

/// Binary DropBlock mask (1 = keep). Block seeds are Bernoulli at every
/// position where a full block fits, with rate chosen so that the expected
/// dropped fraction is about drop_rate before overlaps.
inline std::vector<std::uint8_t> dropblock_mask(std::size_t height, std::size_t width, std::size_t block_size,
                                                double drop_rate, Rng& rng) {
  if (block_size == 0 || block_size > std::min(height, width))
    throw ShapeError("dropblock_mask: block larger than feature map");
  if (!(drop_rate >= 0.0 && drop_rate <= 1.0)) throw DomainError("dropblock_mask: drop_rate must be in [0, 1]");
  std::vector<std::uint8_t> mask(height * width, 1);
  if (drop_rate == 0.0) return mask;
  const std::size_t vh = height - block_size + 1, vw = width - block_size + 1;
  const double gamma = std::min(1.0, drop_rate / static_cast<double>(block_size * block_size) *
                                         static_cast<double>(height * width) / static_cast<double>(vh * vw));
  for (std::size_t y = 0; y < vh; ++y)
    for (std::size_t x = 0; x < vw; ++x)
      if (rng.bernoulli(gamma))
        for (std::size_t by = 0; by < block_size; ++by)
          for (std::size_t bx = 0; bx < block_size; ++bx) mask[(y + by) * width + x + bx] = 0;
  return mask;
}

/// Pre-model pipeline for one training clip: crop, flip, cutout.
inline Clip augment_clip(const Clip& clip, const AugmentConfig& cfg, Rng& rng) {
  Clip out = random_crop_consistent(clip, cfg.crop_size, rng);
  out = horizontal_flip(out, cfg.flip_prob, rng);
  if (cfg.cutout && cfg.cutout->n_holes > 0) out = cutout(out, cfg.cutout->n_holes, cfg.cutout->hole_size, rng);
  return out;
}

}  // namespace lrwr
