#pragma once

// Classification accuracy reports.
//
// CSV form (header `metric,class,predicted,value`):
//   samples,,,N
//   top<k>,,,ratio            one row per reported k
//   per_class,<name>,,ratio   one row per class, class order
//   confusion,<true>,<pred>,count   K*K rows, row-major

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lrwr/augment.hpp"
#include "lrwr/clip.hpp"
#include "lrwr/errors.hpp"
#include "lrwr/manifest.hpp"
#include "lrwr/model.hpp"

namespace lrwr {

struct EvalReport {
  std::vector<std::string> classes;
  double top1 = 0.0;
  std::map<std::size_t, double> topk;
  std::vector<std::pair<std::string, double>> per_class;  // class order
  std::vector<std::vector<std::size_t>> confusion;        // [true][predicted]
  std::size_t sample_count = 0;
};

/// k values reported: 1, 2, 3, 5, 10 and K, restricted to <= K.
inline std::vector<std::size_t> report_ks(std::size_t num_classes) {
  std::set<std::size_t> ks;
  for (std::size_t k : {1u, 2u, 3u, 5u, 10u})
    if (k <= num_classes) ks.insert(k);
  ks.insert(num_classes);
  return {ks.begin(), ks.end()};
}

/// Builds a report from per-sample class scores (higher is better). Ties
/// rank the lower class index first.
inline EvalReport build_report(const std::vector<std::string>& classes, const std::vector<std::size_t>& truths,
                               const std::vector<std::vector<double>>& scores) {
  if (truths.empty()) throw DomainError("evaluate: empty test split");
  if (truths.size() != scores.size()) throw ShapeError("evaluate: truths and scores differ in length");
  const std::size_t K = classes.size();
  EvalReport rep;
  rep.classes = classes;
  rep.sample_count = truths.size();
  rep.confusion.assign(K, std::vector<std::size_t>(K, 0));
  const auto ks = report_ks(K);
  std::map<std::size_t, std::size_t> hits;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const auto& s = scores[i];
    if (s.size() != K) throw ShapeError("evaluate: score vector has wrong length");
    if (truths[i] >= K) throw DomainError("evaluate: true class out of range");
    std::vector<std::size_t> order(K);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    ++rep.confusion[truths[i]][order[0]];
    const auto rank = static_cast<std::size_t>(std::find(order.begin(), order.end(), truths[i]) - order.begin());
    for (auto k : ks)
      if (rank < k) ++hits[k];
  }
  const double n = static_cast<double>(truths.size());
  for (auto k : ks) rep.topk[k] = static_cast<double>(hits[k]) / n;
  rep.top1 = rep.topk.at(1);
  for (std::size_t c = 0; c < K; ++c) {
    const auto row = std::accumulate(rep.confusion[c].begin(), rep.confusion[c].end(), std::size_t{0});
    rep.per_class.emplace_back(classes[c], row ? static_cast<double>(rep.confusion[c][c]) / static_cast<double>(row) : 0.0);
  }
  return rep;
}

/// Top-1 accuracy recomputed from the confusion matrix diagonal.
inline double top1_from_confusion(const EvalReport& r) {
  std::size_t diag = 0, total = 0;
  for (std::size_t i = 0; i < r.confusion.size(); ++i)
    for (std::size_t j = 0; j < r.confusion[i].size(); ++j) {
      total += r.confusion[i][j];
      if (i == j) diag += r.confusion[i][j];
    }
  return total ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
}

/// Test clips, center-cropped to the model input size and normalized.
template <typename T>
struct EvalSet {
  std::vector<std::vector<T>> inputs;
  std::vector<std::size_t> frames;
  std::vector<std::size_t> labels;
};

template <typename T>
EvalSet<T> load_eval_set(const Manifest& m, const fs::path& manifest_dir, std::size_t input_size) {
  EvalSet<T> set;
  for (const auto* r : m.split(Split::test)) {
    const Clip clip = read_clip(resolve_clip_path(manifest_dir, r->clip_path));
    const Clip c = center_crop(clip, input_size);
    set.inputs.push_back(normalize_clip<T>(c));
    set.frames.push_back(c.frames());
    set.labels.push_back(static_cast<std::size_t>(r->class_id));
  }
  return set;
}

template <typename T>
EvalReport evaluate_set(const ParamSet<T>& params, const ALNConfig& cfg, const std::vector<std::string>& classes,
                        const EvalSet<T>& set) {
  if (set.inputs.empty()) throw DomainError("evaluate: empty test split");
  std::vector<std::vector<double>> scores;
  for (std::size_t i = 0; i < set.inputs.size(); ++i) {
    const auto out = forward_sample<T>(params, cfg, set.inputs[i], set.frames[i], Mode::eval, nullptr, nullptr);
    scores.emplace_back(out.pooled.data(), out.pooled.data() + out.pooled.size());
  }
  return build_report(classes, set.labels, scores);
}

/// Evaluates the test split of a manifest: center crop, no flip, eval mode.
template <typename T>
EvalReport evaluate(const ParamSet<T>& params, const ALNConfig& cfg, const Manifest& m, const fs::path& manifest_dir) {
  if (m.split(Split::test).empty()) throw DomainError("evaluate: empty test split");
  return evaluate_set(params, cfg, m.classes, load_eval_set<T>(m, manifest_dir, cfg.input_size));
}

enum class ReportFormat { text, csv };

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace detail

inline std::string emit_report(const EvalReport& r, ReportFormat format) {
  std::string out;
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  if (format == ReportFormat::text) {
    out += "samples=" + std::to_string(r.sample_count) + "\n";
    for (const auto& [k, v] : r.topk) out += "top" + std::to_string(k) + "=" + num(v) + "\n";
    for (const auto& [name, v] : r.per_class) out += "per_class." + name + "=" + num(v) + "\n";
    for (std::size_t i = 0; i < r.confusion.size(); ++i) {
      out += "confusion." + r.classes[i] + "=";
      for (std::size_t j = 0; j < r.confusion[i].size(); ++j)
        out += (j ? " " : "") + std::to_string(r.confusion[i][j]);
      out += "\n";
    }
    return out;
  }
  out += "metric,class,predicted,value\n";
  out += "samples,,," + std::to_string(r.sample_count) + "\n";
  for (const auto& [k, v] : r.topk) out += "top" + std::to_string(k) + ",,," + num(v) + "\n";
  for (const auto& [name, v] : r.per_class) out += "per_class," + detail::csv_field(name) + ",," + num(v) + "\n";
  for (std::size_t i = 0; i < r.confusion.size(); ++i)
    for (std::size_t j = 0; j < r.confusion[i].size(); ++j)
      out += "confusion," + detail::csv_field(r.classes[i]) + "," + detail::csv_field(r.classes[j]) + "," + std::to_string(r.confusion[i][j]) + "\n";
  return out;
}

}  // namespace lrwr
