#pragma once

// Dataset construction: class filtering, balanced train/test splitting,
// train-split upsampling and a synthetic stand-in corpus.

#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "lrwr/clip.hpp"
#include "lrwr/errors.hpp"
#include "lrwr/manifest.hpp"
#include "lrwr/rng.hpp"

namespace lrwr {

/// Renames classes through an alias table (e.g. merging near-homophone word
/// forms). Unlisted names pass through. Class ids are rebuilt in order of
/// first appearance in the existing class list.
inline Manifest apply_class_aliases(const Manifest& pool, const std::map<std::string, std::string>& aliases) {
  const auto canon = [&](const std::string& name) {
    auto it = aliases.find(name);
    return it == aliases.end() ? name : it->second;
  };
  Manifest out;
  out.per_class_train = pool.per_class_train;
  out.per_class_test = pool.per_class_test;
  std::unordered_map<std::string, int> ids;
  for (const auto& c : pool.classes) {
    const auto name = canon(c);
    if (ids.emplace(name, static_cast<int>(out.classes.size())).second) out.classes.push_back(name);
  }
  for (auto r : pool.records) {
    r.class_name = canon(r.class_name);
    r.class_id = ids.at(r.class_name);
    out.records.push_back(std::move(r));
  }
  return out;
}

/// Drops classes with fewer than min_count natural samples and reindexes the
/// survivors densely, preserving class order.
inline Manifest filter_classes(const Manifest& pool, std::size_t min_count) {
  if (min_count < 1) throw DomainError("filter_classes: min_count must be >= 1");
  std::vector<std::size_t> counts(pool.classes.size(), 0);
  for (const auto& r : pool.records)
    if (r.origin == Origin::natural) ++counts.at(static_cast<std::size_t>(r.class_id));
  Manifest out;
  out.per_class_train = pool.per_class_train;
  out.per_class_test = pool.per_class_test;
  std::vector<int> remap(pool.classes.size(), -1);
  for (std::size_t k = 0; k < pool.classes.size(); ++k) {
    if (counts[k] >= min_count) {
      remap[k] = static_cast<int>(out.classes.size());
      out.classes.push_back(pool.classes[k]);
    }
  }
  if (out.classes.empty())
    throw DomainError("filter_classes: no class has at least " + std::to_string(min_count) + " samples");
  for (const auto& r : pool.records) {
    const int id = remap[static_cast<std::size_t>(r.class_id)];
    if (id < 0) continue;
    auto copy = r;
    copy.class_id = id;
    out.records.push_back(std::move(copy));
  }
  return out;
}

/// Keeps per_class natural samples of every class, chosen uniformly with a
/// seeded shuffle; the first test_per_class chosen go to the test split.
/// Within a class, records are emitted train-first, each split in pool order.
inline Manifest balance_and_split(const Manifest& pool, std::size_t per_class, std::size_t test_per_class,
                                  std::uint64_t seed) {
  if (per_class < 1) throw DomainError("balance_and_split: per_class must be >= 1");
  if (test_per_class >= per_class) throw DomainError("balance_and_split: test_per_class must be < per_class");
  std::vector<std::vector<std::size_t>> by_class(pool.classes.size());
  for (std::size_t i = 0; i < pool.records.size(); ++i)
    if (pool.records[i].origin == Origin::natural)
      by_class.at(static_cast<std::size_t>(pool.records[i].class_id)).push_back(i);

  std::vector<std::string> short_classes;
  for (std::size_t k = 0; k < by_class.size(); ++k)
    if (by_class[k].size() < per_class)
      short_classes.push_back(pool.classes[k] + " (" + std::to_string(by_class[k].size()) + ")");
  if (!short_classes.empty()) {
    std::string msg = "balance_and_split: classes with fewer than " + std::to_string(per_class) + " samples:";
    for (const auto& c : short_classes) msg += " " + c;
    throw DomainError(msg);
  }

  Rng rng(seed);
  Manifest out;
  out.classes = pool.classes;
  out.per_class_train = static_cast<std::uint32_t>(per_class - test_per_class);
  out.per_class_test = static_cast<std::uint32_t>(test_per_class);
  for (auto& idx : by_class) {
    auto order = idx;
    rng.shuffle(order);
    std::set<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_per_class));
    std::set<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(test_per_class),
                                order.begin() + static_cast<std::ptrdiff_t>(per_class));
    for (auto i : train) {
      auto r = pool.records[i];
      r.split = Split::train;
      out.records.push_back(std::move(r));
    }
    for (auto i : test) {
      auto r = pool.records[i];
      r.split = Split::test;
      out.records.push_back(std::move(r));
    }
  }
  return out;
}

/// Natural pool records whose clip is not referenced by `selected`, with
/// class ids remapped onto selected's class list (unknown classes dropped).
inline Manifest unused_records(const Manifest& pool, const Manifest& selected) {
  std::set<std::string> used;
  for (const auto& r : selected.records) used.insert(r.clip_path);
  std::unordered_map<std::string, int> ids;
  for (std::size_t k = 0; k < selected.classes.size(); ++k) ids.emplace(selected.classes[k], static_cast<int>(k));
  Manifest out;
  out.classes = selected.classes;
  for (const auto& r : pool.records) {
    if (r.origin != Origin::natural || used.contains(r.clip_path)) continue;
    auto it = ids.find(r.class_name);
    if (it == ids.end()) continue;
    auto copy = r;
    copy.class_id = it->second;
    copy.split = Split::train;
    out.records.push_back(std::move(copy));
  }
  return out;
}

/// Raises every class's train count to target_per_class, first with unused
/// natural samples, then by duplicating existing train records. The test
/// split is left untouched.
inline Manifest upsample(const Manifest& manifest, const Manifest& unused_pool, std::size_t target_per_class,
                         std::uint64_t seed) {
  const std::size_t k_classes = manifest.classes.size();
  std::vector<std::vector<std::size_t>> train(k_classes);
  std::set<std::string> referenced;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    referenced.insert(r.clip_path);
    if (r.split == Split::train) train.at(static_cast<std::size_t>(r.class_id)).push_back(i);
  }
  for (std::size_t k = 0; k < k_classes; ++k)
    if (train[k].size() > target_per_class)
      throw DomainError("upsample: class " + manifest.classes[k] + " already has " +
                        std::to_string(train[k].size()) + " train samples, above target " +
                        std::to_string(target_per_class));

  std::unordered_map<std::string, std::size_t> class_index;
  for (std::size_t k = 0; k < k_classes; ++k) class_index.emplace(manifest.classes[k], k);
  std::vector<std::vector<const SampleRecord*>> spare(k_classes);
  for (const auto& r : unused_pool.records) {
    if (r.origin != Origin::natural || referenced.contains(r.clip_path)) continue;
    auto it = class_index.find(r.class_name);
    if (it != class_index.end()) spare[it->second].push_back(&r);
  }

  Rng rng(seed);
  Manifest out = manifest;
  out.per_class_train = static_cast<std::uint32_t>(target_per_class);
  for (std::size_t k = 0; k < k_classes; ++k) {
    std::size_t need = target_per_class - train[k].size();
    rng.shuffle(spare[k]);
    std::set<std::string> taken;
    for (const SampleRecord* r : spare[k]) {
      if (need == 0) break;
      if (!taken.insert(r->clip_path).second) continue;
      auto copy = *r;
      copy.class_id = static_cast<int>(k);
      copy.split = Split::train;
      copy.origin = Origin::natural;
      out.records.push_back(std::move(copy));
      --need;
    }
    if (need == 0) continue;
    // Duplicate the class's existing train records in a seeded cyclic order.
    std::vector<SampleRecord> sources;
    for (auto i : train[k]) sources.push_back(manifest.records[i]);
    for (const SampleRecord* r : spare[k])
      if (taken.contains(r->clip_path)) {
        sources.push_back(*r);
        sources.back().class_id = static_cast<int>(k);
      }
    if (sources.empty())
      throw DomainError("upsample: class " + manifest.classes[k] + " has no train samples to copy");
    rng.shuffle(sources);
    for (std::size_t j = 0; need > 0; ++j, --need) {
      auto copy = sources[j % sources.size()];
      copy.split = Split::train;
      copy.origin = Origin::upsampled_copy;
      out.records.push_back(std::move(copy));
    }
  }
  return out;
}

// --- synthetic corpus -------------------------------------------------------

struct SyntheticSpec {
  std::size_t classes = 5;
  std::size_t samples_per_class = 40;
  std::size_t frames = 16;
  std::size_t size = 32;
  std::uint64_t seed = 7;
};

/// Distinct oscillation frequencies available for a clip length.
inline std::size_t synthetic_frequencies(std::size_t frames) { return frames >= 6 ? frames / 2 - 1 : 1; }

/// Maximum number of classes the generator can make distinct.
inline std::size_t synthetic_max_classes(std::size_t frames) { return 3 * synthetic_frequencies(frames); }

/// One synthetic clip: a bright Gaussian blob on dark noise. Class k moves
/// along axis k mod 3 (vertical, horizontal, or circular) at (k / 3) + 1
/// cycles per clip. Phase, center, amplitude and
/// brightness are jittered per sample, so single frames carry no class
/// information; only the motion over time does. Every pattern is
/// symmetric under horizontal mirroring.
inline Clip synthetic_clip(const SyntheticSpec& spec, std::size_t class_id, std::size_t sample) {
  Rng rng(mix_seed(spec.seed, {class_id, sample}));
  const std::size_t n_freq = synthetic_frequencies(spec.frames);
  if (class_id >= 3 * n_freq) throw DomainError("synthetic_clip: class id beyond distinct patterns");
  const double freq = static_cast<double>(class_id / 3 + 1);
  const std::size_t axis = class_id % 3;
  const double s = static_cast<double>(spec.size);
  const double sigma = std::max(1.0, s / 8.0);
  const double brightness = rng.uniform(160.0, 220.0);
  const double cx = s / 2 + rng.uniform(-s / 10, s / 10);
  const double cy = s / 2 + rng.uniform(-s / 10, s / 10);
  const double amp = s * rng.uniform(0.16, 0.22);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  Clip clip(spec.frames, spec.size, spec.size);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const double a = 2.0 * std::numbers::pi * freq * static_cast<double>(t) / static_cast<double>(spec.frames) + phase;
    double bx = cx, by = cy;
    if (axis == 0) {
      by += amp * std::sin(a);
    } else if (axis == 1) {
      bx += amp * std::sin(a);
    } else {
      bx += amp * std::cos(a);
      by += amp * std::sin(a);
    }
    for (std::size_t y = 0; y < spec.size; ++y) {
      for (std::size_t x = 0; x < spec.size; ++x) {
        const double dx = static_cast<double>(x) - bx, dy = static_cast<double>(y) - by;
        const double v = static_cast<double>(rng.uniform_int(20)) +
                         brightness * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        clip.at(t, y, x) = static_cast<std::uint8_t>(std::min(255.0, std::round(v)));
      }
    }
  }
  return clip;
}

inline std::string synthetic_class_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "class_%02zu", k);
  return buf;
}

/// Writes clips under out_dir/clips and out_dir/manifest.tsv. One fifth of
/// each class (rounded down) is assigned to the test split.
inline Manifest generate_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
  if (spec.classes < 2) throw DomainError("generate_synthetic: classes must be >= 2");
  if (spec.samples_per_class < 1) throw DomainError("generate_synthetic: samples must be >= 1");
  if (spec.frames < 1) throw DomainError("generate_synthetic: frames must be >= 1");
  if (spec.size < 4) throw DomainError("generate_synthetic: size must be >= 4");
  if (spec.classes > synthetic_max_classes(spec.frames))
    throw DomainError("generate_synthetic: at most " + std::to_string(synthetic_max_classes(spec.frames)) +
                      " distinct classes for " + std::to_string(spec.frames) + " frames");
  Manifest pool;
  for (std::size_t k = 0; k < spec.classes; ++k) pool.classes.push_back(synthetic_class_name(k));
  for (std::size_t k = 0; k < spec.classes; ++k) {
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "clips/c%03zu_s%04zu.lrwr", k, i);
      write_clip(synthetic_clip(spec, k, i), out_dir / name);
      SampleRecord r;
      r.clip_path = name;
      r.class_name = pool.classes[k];
      r.class_id = static_cast<int>(k);
      r.frame_count = static_cast<std::uint32_t>(spec.frames);
      pool.records.push_back(std::move(r));
    }
  }
  Manifest m = balance_and_split(pool, spec.samples_per_class, spec.samples_per_class / 5, spec.seed);
  write_manifest(m, out_dir / "manifest.tsv");
  return m;
}

}  // namespace lrwr
