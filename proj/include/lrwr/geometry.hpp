#pragma once

// Mouth region-of-interest geometry: crop sizing from facial landmarks,
// in-plane rotation normalization, crop extraction and IoU-based track
// filtering. Everything here is a pure function of its arguments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lrwr/clip.hpp"
#include "lrwr/errors.hpp"

namespace lrwr {

struct Point2 {
  double x = 0.0;  // rightward positive
  double y = 0.0;  // downward positive
  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct FrameLandmarks {
  Point2 left_lip_corner;
  Point2 right_lip_corner;
  Point2 lip_center;
  Point2 nose_tip;
  friend bool operator==(const FrameLandmarks&, const FrameLandmarks&) = default;
};

struct BoundingBox {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  bool valid() const { return x0 < x1 && y0 < y1; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Read-only view of one grayscale frame.
struct ImageView {
  std::span<const std::uint8_t> pixels;
  std::size_t height = 0;
  std::size_t width = 0;

  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

inline ImageView frame_view(const Clip& clip, std::size_t t) {
  return {clip.frame(t), clip.height(), clip.width()};
}

/// Side length of the square mouth crop:
///   w = min(3 d, max(1.5 d, 1.05 x_r - 0.95 x_l))
/// where d is the nose-to-lip-center distance and x_l, x_r the lip-corner
/// abscissae. The result always lies in [1.5 d, 3 d].
inline double crop_side_length(double nose_to_lips, double x_left, double x_right) {
  if (!(nose_to_lips > 0.0) || !std::isfinite(nose_to_lips))
    throw DomainError("crop_side_length: nose-to-lips distance must be positive");
  const double inner = 1.05 * x_right - 0.95 * x_left;
  return std::min(3.0 * nose_to_lips, std::max(1.5 * nose_to_lips, inner));
}

/// Bilinear sample with zero outside the image.
inline double sample_bilinear(const ImageView& img, double x, double y) {
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const double ax = x - fx0, ay = y - fy0;
  const auto px = [&](double xx, double yy) -> double {
    if (xx < 0 || yy < 0 || xx >= static_cast<double>(img.width) || yy >= static_cast<double>(img.height))
      return 0.0;
    return img.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
  };
  return (1 - ay) * ((1 - ax) * px(fx0, fy0) + ax * px(fx0 + 1, fy0)) +
         ay * ((1 - ax) * px(fx0, fy0 + 1) + ax * px(fx0 + 1, fy0 + 1));
}

inline std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

/// In-plane angle of the lip-corner line, radians.
inline double lip_angle(const FrameLandmarks& lm) {
  return std::atan2(lm.right_lip_corner.y - lm.left_lip_corner.y,
                    lm.right_lip_corner.x - lm.left_lip_corner.x);
}

inline Point2 rotate_about(Point2 p, Point2 center, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double dx = p.x - center.x, dy = p.y - center.y;
  return {center.x + c * dx - s * dy, center.y + s * dx + c * dy};
}

// Angles below this are treated as already aligned and the frame is copied.
inline constexpr double kAlignedAngle = 1e-9;

/// Rotates every frame about its lip center so the lip-corner line becomes
/// horizontal. Landmarks receive the same rotation. Pixels that map from
/// outside the source frame become 0.
inline std::pair<Clip, std::vector<FrameLandmarks>> align_rotation(
    const Clip& clip, std::span<const FrameLandmarks> landmarks) {
  if (landmarks.size() != clip.frames())
    throw ShapeError("align_rotation: " + std::to_string(landmarks.size()) + " landmark sets for " +
                     std::to_string(clip.frames()) + " frames");
  Clip out(clip.frames(), clip.height(), clip.width());
  std::vector<FrameLandmarks> out_lm(landmarks.begin(), landmarks.end());
  for (std::size_t t = 0; t < clip.frames(); ++t) {
    const auto& lm = landmarks[t];
    const double angle = lip_angle(lm);
    if (std::abs(angle) < kAlignedAngle) {
      std::ranges::copy(clip.frame(t), out.frame(t).begin());
      continue;
    }
    const Point2 c = lm.lip_center;
    const ImageView src = frame_view(clip, t);
    // Output pixel p samples the source at c + R(angle) (p - c).
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::size_t y = 0; y < clip.height(); ++y) {
      for (std::size_t x = 0; x < clip.width(); ++x) {
        const double dx = static_cast<double>(x) - c.x, dy = static_cast<double>(y) - c.y;
        out.at(t, y, x) = to_u8(sample_bilinear(src, c.x + ca * dx - sa * dy, c.y + sa * dx + ca * dy));
      }
    }
    auto& o = out_lm[t];
    o.left_lip_corner = rotate_about(lm.left_lip_corner, c, -angle);
    o.right_lip_corner = rotate_about(lm.right_lip_corner, c, -angle);
    o.nose_tip = rotate_about(lm.nose_tip, c, -angle);
  }
  return {std::move(out), std::move(out_lm)};
}

struct CropOptions {
  std::size_t out_size = 112;
  // Origin of the x axis used in the crop-size rule. Zero means image
  // coordinates; set to the face box's x0 to measure in the face frame.
  double x_origin = 0.0;
};

/// Square mouth box centered on the lip center with the crop-size rule's side.
inline BoundingBox mouth_box(const FrameLandmarks& lm, double x_origin = 0.0) {
  const double w = crop_side_length(distance(lm.nose_tip, lm.lip_center),
                                    lm.left_lip_corner.x - x_origin, lm.right_lip_corner.x - x_origin);
  const Point2 c = lm.lip_center;
  return {c.x - w / 2, c.y - w / 2, c.x + w / 2, c.y + w / 2};
}

/// Crops the mouth square and resizes it bilinearly to out_size x out_size.
/// Parts of the square outside the frame read as 0.
inline std::vector<std::uint8_t> extract_mouth_crop(const ImageView& frame, const FrameLandmarks& lm,
                                                    const CropOptions& opts = {}) {
  const Point2 c = lm.lip_center;
  if (!(c.x >= 0 && c.y >= 0 && c.x < static_cast<double>(frame.width) && c.y < static_cast<double>(frame.height)))
    throw DomainError("extract_mouth_crop: lip center outside frame");
  if (opts.out_size == 0) throw DomainError("extract_mouth_crop: out_size must be positive");
  const BoundingBox box = mouth_box(lm, opts.x_origin);
  const double scale = box.width() / static_cast<double>(opts.out_size);
  std::vector<std::uint8_t> out(opts.out_size * opts.out_size);
  for (std::size_t i = 0; i < opts.out_size; ++i) {
    const double sy = box.y0 + (static_cast<double>(i) + 0.5) * scale - 0.5;
    for (std::size_t j = 0; j < opts.out_size; ++j) {
      const double sx = box.x0 + (static_cast<double>(j) + 0.5) * scale - 0.5;
      out[i * opts.out_size + j] = to_u8(sample_bilinear(frame, sx, sy));
    }
  }
  return out;
}

/// Intersection over union of two axis-aligned boxes.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

inline constexpr double kDefaultMinIou = 0.5;

/// True (keep) iff every consecutive pair of boxes overlaps with IoU >= min_iou.
inline bool motion_filter(std::span<const BoundingBox> track, double min_iou = kDefaultMinIou) {
  if (track.empty()) throw DomainError("motion_filter: empty track");
  for (std::size_t i = 1; i < track.size(); ++i)
    if (iou(track[i - 1], track[i]) < min_iou) return false;
  return true;
}

/// Crop-quality gate applied to finished clips. Stands in for a learned
/// crop classifier; the default accepts everything.
using ClipPredicate = std::function<bool(const Clip&)>;

inline bool accept_all_clips(const Clip&) { return true; }

}  // namespace lrwr
