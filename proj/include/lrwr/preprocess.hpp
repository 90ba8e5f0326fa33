#pragma once

// Full-frame clip -> aligned 112x112 mouth clip.
//
// Landmark files are plain text, one line per frame:
//
//   frame_index lx ly rx ry cx cy nx ny [fx0 fy0 fx1 fy1]
//
// (left lip corner, right lip corner, lip center, nose tip, optional face
// box). Blank lines and lines starting with '#' are ignored. Every frame
// index 0..T-1 must appear exactly once; the order of lines is free.
// When a face box is present on every line it is the track used by the
// motion filter and its x0 is the origin of the crop-size rule; otherwise
// the mouth box is tracked.

#include <algorithm>
#include <charconv>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lrwr/clip.hpp"
#include "lrwr/errors.hpp"
#include "lrwr/geometry.hpp"
#include "lrwr/io.hpp"

namespace lrwr {

struct LandmarkTrack {
  std::vector<FrameLandmarks> landmarks;
  std::optional<std::vector<BoundingBox>> face_boxes;
};

inline LandmarkTrack parse_landmarks(std::string_view text) {
  struct Row {
    std::size_t index;
    FrameLandmarks lm;
    std::optional<BoundingBox> face;
  };
  std::vector<Row> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    const auto where = "landmarks line " + std::to_string(line_no);
    if (tok.size() != 9 && tok.size() != 13)
      throw FormatError(where + ": expected 9 or 13 fields, got " + std::to_string(tok.size()));
    Row r{};
    {
      const auto& s = tok[0];
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), r.index);
      if (ec != std::errc() || p != s.data() + s.size()) throw FormatError(where + ": bad frame index '" + s + "'");
    }
    std::vector<double> v;
    for (std::size_t i = 1; i < tok.size(); ++i) {
      std::size_t used = 0;
      double x = 0;
      try {
        x = std::stod(tok[i], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok[i].size() || !std::isfinite(x)) throw FormatError(where + ": bad number '" + tok[i] + "'");
      v.push_back(x);
    }
    r.lm = {{v[0], v[1]}, {v[2], v[3]}, {v[4], v[5]}, {v[6], v[7]}};
    if (v.size() == 12) r.face = BoundingBox{v[8], v[9], v[10], v[11]};
    rows.push_back(r);
  }
  if (rows.empty()) throw FormatError("landmarks: no frames");
  std::ranges::sort(rows, {}, &Row::index);
  LandmarkTrack track;
  const bool faces = rows.front().face.has_value();
  if (faces) track.face_boxes.emplace();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].index != i) throw FormatError("landmarks: frame indices must be 0..T-1, each once");
    if (rows[i].face.has_value() != faces) throw FormatError("landmarks: face box present on some lines only");
    track.landmarks.push_back(rows[i].lm);
    if (faces) track.face_boxes->push_back(*rows[i].face);
  }
  return track;
}

inline LandmarkTrack read_landmarks(const fs::path& path) {
  try {
    return parse_landmarks(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.filename().string() + ": " + e.what());
  }
}

struct PreprocessOptions {
  double min_iou = kDefaultMinIou;
  std::size_t out_size = 112;
  ClipPredicate quality = accept_all_clips;
};

enum class PreprocessStatus { kept, motion_rejected, quality_rejected };

struct PreprocessResult {
  PreprocessStatus status = PreprocessStatus::kept;
  std::optional<Clip> clip;
};

/// Aligns, tracks, filters and crops one clip.
inline PreprocessResult preprocess_clip(const Clip& clip, const LandmarkTrack& track,
                                        const PreprocessOptions& opts = {}) {
  if (track.landmarks.size() != clip.frames())
    throw ShapeError("preprocess: " + std::to_string(track.landmarks.size()) + " landmark lines for " +
                     std::to_string(clip.frames()) + " frames");
  auto [aligned, lms] = align_rotation(clip, track.landmarks);
  std::vector<BoundingBox> boxes;
  for (std::size_t t = 0; t < lms.size(); ++t) {
    const double x0 = track.face_boxes ? (*track.face_boxes)[t].x0 : 0.0;
    boxes.push_back(track.face_boxes ? (*track.face_boxes)[t] : mouth_box(lms[t], x0));
  }
  if (!motion_filter(boxes, opts.min_iou)) return {PreprocessStatus::motion_rejected, std::nullopt};
  Clip out(clip.frames(), opts.out_size, opts.out_size);
  for (std::size_t t = 0; t < lms.size(); ++t) {
    CropOptions co{opts.out_size, track.face_boxes ? (*track.face_boxes)[t].x0 : 0.0};
    const auto crop = extract_mouth_crop(frame_view(aligned, t), lms[t], co);
    std::ranges::copy(crop, out.frame(t).begin());
  }
  if (opts.quality && !opts.quality(out)) return {PreprocessStatus::quality_rejected, std::nullopt};
  return {PreprocessStatus::kept, std::move(out)};
}

struct PreprocessSummary {
  std::size_t kept = 0;
  std::size_t motion_rejected = 0;
  std::size_t quality_rejected = 0;
  std::size_t failed = 0;
  std::size_t total() const { return kept + motion_rejected + quality_rejected + failed; }
};

/// Runs preprocess_clip over frames_dir/*.lrwr with landmarks_dir/<stem>.txt,
/// writing kept clips to out_dir/<stem>.lrwr. Problem clips are skipped with
/// a warning.
inline PreprocessSummary preprocess_directory(const fs::path& frames_dir, const fs::path& landmarks_dir,
                                              const fs::path& out_dir, const PreprocessOptions& opts = {},
                                              std::ostream* log = &std::cerr) {
  if (!fs::is_directory(frames_dir)) throw DomainError("preprocess: not a directory: " + frames_dir.string());
  if (!fs::is_directory(landmarks_dir)) throw DomainError("preprocess: not a directory: " + landmarks_dir.string());
  std::vector<fs::path> inputs;
  for (const auto& e : fs::directory_iterator(frames_dir))
    if (e.is_regular_file() && e.path().extension() == ".lrwr") inputs.push_back(e.path());
  std::ranges::sort(inputs);
  fs::create_directories(out_dir);
  PreprocessSummary sum;
  for (const auto& in : inputs) {
    const auto stem = in.stem().string();
    try {
      const Clip clip = read_clip(in);
      const auto track = read_landmarks(landmarks_dir / (stem + ".txt"));
      auto res = preprocess_clip(clip, track, opts);
      switch (res.status) {
        case PreprocessStatus::kept:
          write_clip(*res.clip, out_dir / (stem + ".lrwr"));
          ++sum.kept;
          break;
        case PreprocessStatus::motion_rejected:
          ++sum.motion_rejected;
          if (log) *log << "filtered: " << stem << ": abrupt motion (IoU below " << opts.min_iou << ")\n";
          break;
        case PreprocessStatus::quality_rejected:
          ++sum.quality_rejected;
          if (log) *log << "filtered: " << stem << ": quality check\n";
          break;
      }
    } catch (const std::exception& e) {
      ++sum.failed;
      if (log) *log << "warning: skipping " << stem << ": " << e.what() << "\n";
    }
  }
  return sum;
}

}  // namespace lrwr
