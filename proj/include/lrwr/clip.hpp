#pragma once

// Grayscale video clips and their packed on-disk container.
//
// Clip file layout (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "LRWR"
//   4       1     version = 1
//   5       1     dtype = 0 (uint8 grayscale)
//   6       2     reserved = 0
//   8       4     T (frames)
//   12      4     H (rows)
//   16      4     W (columns)
//   20      T*H*W payload, frame-major, row-major within a frame

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lrwr/errors.hpp"
#include "lrwr/io.hpp"

namespace lrwr {

/// A T x H x W stack of 8-bit grayscale frames.
class Clip {
 public:
  Clip() = default;
  Clip(std::size_t frames, std::size_t height, std::size_t width, std::uint8_t fill = 0)
      : t_(frames), h_(height), w_(width), data_(frames * height * width, fill) {}

  std::size_t frames() const { return t_; }
  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t frame_size() const { return h_ * w_; }
  bool empty() const { return data_.empty(); }

  std::uint8_t& at(std::size_t t, std::size_t y, std::size_t x) { return data_[(t * h_ + y) * w_ + x]; }
  std::uint8_t at(std::size_t t, std::size_t y, std::size_t x) const { return data_[(t * h_ + y) * w_ + x]; }

  std::span<std::uint8_t> frame(std::size_t t) { return {data_.data() + t * frame_size(), frame_size()}; }
  std::span<const std::uint8_t> frame(std::size_t t) const {
    return {data_.data() + t * frame_size(), frame_size()};
  }

  std::vector<std::uint8_t>& data() { return data_; }
  const std::vector<std::uint8_t>& data() const { return data_; }

  friend bool operator==(const Clip&, const Clip&) = default;

 private:
  std::size_t t_ = 0, h_ = 0, w_ = 0;
  std::vector<std::uint8_t> data_;
};

inline constexpr std::size_t kClipHeaderBytes = 20;
inline constexpr std::uint8_t kClipVersion = 1;
// Upper bound on payload size accepted by the reader (4 GiB).
inline constexpr std::uint64_t kMaxClipPayload = 1ULL << 32;

inline std::string encode_clip(const Clip& clip) {
  if (clip.frames() == 0 || clip.height() == 0 || clip.width() == 0)
    throw ShapeError("encode_clip: clip must have T, H, W >= 1");
  if (clip.frames() > 0xFFFFFFFFu || clip.height() > 0xFFFFFFFFu || clip.width() > 0xFFFFFFFFu)
    throw FormatError("encode_clip: dimension does not fit in u32");
  ByteWriter w;
  w.raw("LRWR");
  w.u8(kClipVersion);
  w.u8(0);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(clip.frames()));
  w.u32(static_cast<std::uint32_t>(clip.height()));
  w.u32(static_cast<std::uint32_t>(clip.width()));
  w.raw({reinterpret_cast<const char*>(clip.data().data()), clip.data().size()});
  return w.take();
}

inline Clip decode_clip(std::string_view bytes) {
  ByteReader r(bytes);
  if (bytes.size() < kClipHeaderBytes) throw FormatError("clip: header truncated");
  if (r.raw(4) != "LRWR") throw FormatError("clip: bad magic");
  if (r.u8() != kClipVersion) throw FormatError("clip: unsupported version");
  if (r.u8() != 0) throw FormatError("clip: unsupported dtype");
  if (r.u16() != 0) throw FormatError("clip: reserved field not zero");
  const std::uint64_t t = r.u32(), h = r.u32(), w = r.u32();
  if (t == 0 || h == 0 || w == 0) throw FormatError("clip: zero dimension");
  // Checked one factor at a time so the product cannot wrap.
  if (h * w > kMaxClipPayload || t > kMaxClipPayload / (h * w))
    throw FormatError("clip: dimension overflow");
  const std::uint64_t n = t * h * w;
  if (r.remaining() != n) throw FormatError("clip: payload size does not match header");
  Clip clip(t, h, w);
  const auto payload = r.raw(n);
  std::copy(payload.begin(), payload.end(), reinterpret_cast<char*>(clip.data().data()));
  return clip;
}

inline void write_clip(const Clip& clip, const std::filesystem::path& path) {
  atomic_write(path, encode_clip(clip));
}

inline Clip read_clip(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw FormatError(std::string("clip: ") + e.what());
  }
  return decode_clip(bytes);
}

}  // namespace lrwr
