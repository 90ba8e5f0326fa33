#pragma once

// Dataset catalogue and its line-oriented text form.
//
//   #lrwr-manifest v1
//   #classes<TAB>name_0<TAB>name_1...
//   #per_class<TAB>train<TAB>test
//   clip_path<TAB>class_name<TAB>class_id<TAB>split<TAB>frame_count<TAB>origin[<TAB>speaker]
//
// Only the first line is mandatory. When the #classes line is absent the
// class list is rebuilt from the records ordered by class_id. Other lines
// starting with '#' are ignored. clip_path is relative to the manifest's
// directory unless absolute.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lrwr/errors.hpp"
#include "lrwr/io.hpp"

namespace lrwr {

enum class Split { train, test };
enum class Origin { natural, upsampled_copy };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }
inline std::string_view to_string(Origin o) { return o == Origin::natural ? "natural" : "upsampled-copy"; }

struct SampleRecord {
  std::string clip_path;
  std::string class_name;
  int class_id = 0;
  Split split = Split::train;
  std::uint32_t frame_count = 1;
  Origin origin = Origin::natural;
  std::string speaker;  // optional, empty when unknown

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct Manifest {
  std::vector<SampleRecord> records;
  std::vector<std::string> classes;
  std::uint32_t per_class_train = 0;
  std::uint32_t per_class_test = 0;

  std::size_t num_classes() const { return classes.size(); }

  std::vector<const SampleRecord*> split(Split s) const {
    std::vector<const SampleRecord*> out;
    for (const auto& r : records)
      if (r.split == s) out.push_back(&r);
    return out;
  }

  /// Checks class_id/class_name agreement and id range.
  void validate() const {
    for (const auto& r : records) {
      if (r.class_id < 0 || static_cast<std::size_t>(r.class_id) >= classes.size())
        throw FormatError("manifest: class_id " + std::to_string(r.class_id) + " out of range for " +
                          r.clip_path);
      if (classes[static_cast<std::size_t>(r.class_id)] != r.class_name)
        throw FormatError("manifest: class_id " + std::to_string(r.class_id) + " does not match class '" +
                          r.class_name + "'");
      if (r.frame_count < 1) throw FormatError("manifest: frame_count must be >= 1 for " + r.clip_path);
      if (r.split == Split::test && r.origin == Origin::upsampled_copy)
        throw FormatError("manifest: upsampled copy in test split: " + r.clip_path);
    }
  }

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

inline constexpr std::string_view kManifestHeader = "#lrwr-manifest v1";

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename Int>
Int parse_int(std::string_view s, std::string_view what) {
  Int v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw FormatError("manifest: bad " + std::string(what) + " '" + std::string(s) + "'");
  return v;
}

}  // namespace detail

inline std::string serialize_manifest(const Manifest& m) {
  std::ostringstream os;
  os << kManifestHeader << '\n';
  os << "#classes";
  for (const auto& c : m.classes) os << '\t' << c;
  os << '\n';
  os << "#per_class\t" << m.per_class_train << '\t' << m.per_class_test << '\n';
  for (const auto& r : m.records) {
    os << r.clip_path << '\t' << r.class_name << '\t' << r.class_id << '\t' << to_string(r.split) << '\t'
       << r.frame_count << '\t' << to_string(r.origin);
    if (!r.speaker.empty()) os << '\t' << r.speaker;
    os << '\n';
  }
  return os.str();
}

inline Manifest parse_manifest(std::string_view text) {
  Manifest m;
  bool have_classes = false;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    if (line_no == 1) {
      if (line != kManifestHeader) throw FormatError("manifest: missing '#lrwr-manifest v1' header");
      continue;
    }
    if (line.empty()) continue;
    if (line.front() == '#') {
      auto fields = detail::split_tabs(line);
      if (fields[0] == "#classes") {
        have_classes = true;
        for (std::size_t i = 1; i < fields.size(); ++i) m.classes.emplace_back(fields[i]);
      } else if (fields[0] == "#per_class" && fields.size() == 3) {
        m.per_class_train = detail::parse_int<std::uint32_t>(fields[1], "per_class");
        m.per_class_test = detail::parse_int<std::uint32_t>(fields[2], "per_class");
      }
      continue;
    }
    const auto f = detail::split_tabs(line);
    if (f.size() != 6 && f.size() != 7)
      throw FormatError("manifest: line " + std::to_string(line_no) + " has " + std::to_string(f.size()) +
                        " fields");
    SampleRecord r;
    r.clip_path = std::string(f[0]);
    r.class_name = std::string(f[1]);
    r.class_id = detail::parse_int<int>(f[2], "class_id");
    if (f[3] == "train")
      r.split = Split::train;
    else if (f[3] == "test")
      r.split = Split::test;
    else
      throw FormatError("manifest: bad split '" + std::string(f[3]) + "'");
    r.frame_count = detail::parse_int<std::uint32_t>(f[4], "frame_count");
    if (f[5] == "natural")
      r.origin = Origin::natural;
    else if (f[5] == "upsampled-copy")
      r.origin = Origin::upsampled_copy;
    else
      throw FormatError("manifest: bad origin '" + std::string(f[5]) + "'");
    if (f.size() == 7) r.speaker = std::string(f[6]);
    m.records.push_back(std::move(r));
  }
  if (line_no == 0) throw FormatError("manifest: empty file");
  if (!have_classes) {
    std::map<int, std::string> by_id;
    for (const auto& r : m.records) by_id.emplace(r.class_id, r.class_name);
    for (const auto& [id, name] : by_id) {
      if (static_cast<std::size_t>(id) != m.classes.size())
        throw FormatError("manifest: class ids are not dense");
      m.classes.push_back(name);
    }
  }
  m.validate();
  return m;
}

inline void write_manifest(const Manifest& m, const fs::path& path) { atomic_write(path, serialize_manifest(m)); }

inline Manifest read_manifest(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return parse_manifest(text);
}

/// Resolves a record's clip path against the manifest directory.
inline fs::path resolve_clip_path(const fs::path& manifest_dir, const std::string& clip_path) {
  const fs::path p(clip_path);
  return p.is_absolute() ? p : manifest_dir / p;
}

/// Rewrites relative clip paths so they stay valid when the manifest moves
/// from from_dir to to_dir.
inline void rebase_clip_paths(Manifest& m, const fs::path& from_dir, const fs::path& to_dir) {
  const auto dir_or_cwd = [](const fs::path& d) { return d.empty() ? fs::path(".") : d; };
  const auto target = fs::weakly_canonical(fs::absolute(dir_or_cwd(to_dir)));
  for (auto& r : m.records) {
    const fs::path p(r.clip_path);
    if (p.is_absolute()) continue;
    const auto abs = fs::weakly_canonical(fs::absolute(dir_or_cwd(from_dir) / p));
    r.clip_path = abs.lexically_relative(target).generic_string();
  }
}

}  // namespace lrwr
