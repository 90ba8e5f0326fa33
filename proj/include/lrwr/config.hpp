#pragma once

// Training configuration and its text form: INI-style sections [train],
// [augment] and [model] holding `key = value` lines. Lists are
// comma-separated; '#' and ';' start comment lines. Unknown sections or
// keys are errors. Keys left out keep their defaults.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lrwr/augment.hpp"
#include "lrwr/errors.hpp"
#include "lrwr/io.hpp"
#include "lrwr/model.hpp"
#include "lrwr/optim.hpp"

namespace lrwr {

enum class Schedule { cosine, constant };

struct TrainConfig {
  double lr_max = 1e-4;
  double lr_min = 0.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 60;
  AdamOptions adam;
  std::uint64_t seed = 0;
  Schedule schedule = Schedule::cosine;
  double weight_decay = 0.0;  // L2 term added to gradients; 0 = off
  double grad_clip = 0.0;     // global-norm clip; 0 = off
  std::size_t workers = 1;
  double max_skip_fraction = 0.05;
  AugmentConfig augment;
  ALNConfig model;

  void validate() const {
    if (!(lr_min >= 0.0 && lr_min <= lr_max)) throw ConfigError("train: need 0 <= lr_min <= lr_max");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (workers < 1) throw ConfigError("train: workers must be >= 1");
    if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1))
      throw ConfigError("train: adam betas must be in [0, 1)");
    if (!(adam.eps > 0)) throw ConfigError("train: adam_eps must be positive");
    if (weight_decay < 0 || grad_clip < 0) throw ConfigError("train: weight_decay and grad_clip must be >= 0");
    if (!(max_skip_fraction >= 0 && max_skip_fraction <= 1))
      throw ConfigError("train: max_skip_fraction must be in [0, 1]");
    if (!(augment.flip_prob >= 0 && augment.flip_prob <= 1)) throw ConfigError("augment: flip_prob must be in [0, 1]");
    if (!(augment.smoothing_eps >= 0 && augment.smoothing_eps < 1))
      throw ConfigError("augment: smoothing_eps must be in [0, 1)");
    if (augment.mixup && !(augment.mixup_alpha > 0)) throw ConfigError("augment: mixup_alpha must be positive");
    if (augment.crop_size != model.input_size)
      throw ConfigError("augment.crop_size must equal model.input_size");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double cfg_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + ": not a number: '" + v + "'");
  }
}

inline std::uint64_t cfg_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config: " + key + ": not a non-negative integer: '" + v + "'");
  return out;
}

inline bool cfg_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError("config: " + key + ": not a boolean: '" + v + "'");
}

inline std::vector<std::string> cfg_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

inline std::vector<std::size_t> cfg_uint_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& s : cfg_list(v)) out.push_back(static_cast<std::size_t>(cfg_uint(key, s)));
  return out;
}

template <typename Seq>
std::string join(const Seq& xs) {
  std::string out;
  for (const auto& x : xs) {
    if (!out.empty()) out += ",";
    out += std::to_string(x);
  }
  return out;
}

}  // namespace detail

inline TrainConfig parse_config(std::string_view text) {
  using namespace detail;
  TrainConfig c;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  std::map<std::string, std::map<std::string, Setter>> keys;
  auto& tr = keys["train"];
  tr["lr_max"] = [&](auto& k, auto& v) { c.lr_max = cfg_double(k, v); };
  tr["lr_min"] = [&](auto& k, auto& v) { c.lr_min = cfg_double(k, v); };
  tr["batch_size"] = [&](auto& k, auto& v) { c.batch_size = cfg_uint(k, v); };
  tr["epochs"] = [&](auto& k, auto& v) { c.epochs = cfg_uint(k, v); };
  tr["adam_betas"] = [&](auto& k, auto& v) {
    const auto xs = cfg_list(v);
    if (xs.size() != 2) throw ConfigError("config: adam_betas needs two values");
    c.adam.beta1 = cfg_double(k, xs[0]);
    c.adam.beta2 = cfg_double(k, xs[1]);
  };
  tr["adam_eps"] = [&](auto& k, auto& v) { c.adam.eps = cfg_double(k, v); };
  tr["seed"] = [&](auto& k, auto& v) { c.seed = cfg_uint(k, v); };
  tr["schedule"] = [&](auto& k, auto& v) {
    if (v == "cosine")
      c.schedule = Schedule::cosine;
    else if (v == "constant")
      c.schedule = Schedule::constant;
    else
      throw ConfigError("config: " + k + ": expected cosine or constant");
  };
  tr["weight_decay"] = [&](auto& k, auto& v) { c.weight_decay = cfg_double(k, v); };
  tr["grad_clip"] = [&](auto& k, auto& v) { c.grad_clip = cfg_double(k, v); };
  tr["workers"] = [&](auto& k, auto& v) { c.workers = cfg_uint(k, v); };
  tr["max_skip_fraction"] = [&](auto& k, auto& v) { c.max_skip_fraction = cfg_double(k, v); };

  auto& au = keys["augment"];
  au["crop_size"] = [&](auto& k, auto& v) { c.augment.crop_size = cfg_uint(k, v); };
  au["flip_prob"] = [&](auto& k, auto& v) { c.augment.flip_prob = cfg_double(k, v); };
  au["cutout"] = [&](auto& k, auto& v) {
    if (v == "none") {
      c.augment.cutout.reset();
      return;
    }
    const auto xs = cfg_uint_list(k, v);
    if (xs.size() != 2) throw ConfigError("config: cutout needs n_holes,hole_size or none");
    c.augment.cutout = CutoutSpec{xs[0], xs[1]};
  };
  au["mixup"] = [&](auto& k, auto& v) { c.augment.mixup = cfg_bool(k, v); };
  au["mixup_alpha"] = [&](auto& k, auto& v) { c.augment.mixup_alpha = cfg_double(k, v); };
  au["mixup_per_sample"] = [&](auto& k, auto& v) { c.augment.mixup_per_sample = cfg_bool(k, v); };
  au["smoothing_eps"] = [&](auto& k, auto& v) { c.augment.smoothing_eps = cfg_double(k, v); };

  auto& mo = keys["model"];
  mo["input_size"] = [&](auto& k, auto& v) { c.model.input_size = cfg_uint(k, v); };
  mo["num_classes"] = [&](auto& k, auto& v) { c.model.num_classes = cfg_uint(k, v); };
  mo["frontend_channels"] = [&](auto& k, auto& v) { c.model.frontend_channels = cfg_uint(k, v); };
  mo["frontend_temporal_kernel"] = [&](auto& k, auto& v) { c.model.frontend_temporal_kernel = cfg_uint(k, v); };
  mo["frontend_spatial_kernel"] = [&](auto& k, auto& v) { c.model.frontend_spatial_kernel = cfg_uint(k, v); };
  mo["stage_widths"] = [&](auto& k, auto& v) { c.model.stage_widths = cfg_uint_list(k, v); };
  mo["blocks_per_stage"] = [&](auto& k, auto& v) { c.model.blocks_per_stage = cfg_uint_list(k, v); };
  mo["radix"] = [&](auto& k, auto& v) { c.model.radix = cfg_uint(k, v); };
  mo["rnn_hidden"] = [&](auto& k, auto& v) { c.model.rnn_hidden = cfg_uint(k, v); };
  mo["rnn_layers"] = [&](auto& k, auto& v) { c.model.rnn_layers = cfg_uint(k, v); };
  mo["bidirectional"] = [&](auto& k, auto& v) { c.model.bidirectional = cfg_bool(k, v); };
  mo["dropblock"] = [&](auto& k, auto& v) {
    const auto xs = cfg_list(v);
    if (xs.size() != 2) throw ConfigError("config: dropblock needs block_size,drop_rate");
    c.model.dropblock.block_size = cfg_uint(k, xs[0]);
    c.model.dropblock.drop_rate = cfg_double(k, xs[1]);
  };

  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config: line " + std::to_string(line_no) + ": bad section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!keys.contains(section)) throw ConfigError("config: unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty()) throw ConfigError("config: line " + std::to_string(line_no) + ": key outside a section");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    auto& table = keys.at(section);
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
    it->second(section + "." + key, value);
  }
  c.validate();
  return c;
}

inline std::string serialize_config(const TrainConfig& c) {
  using detail::fmt_double;
  std::ostringstream os;
  os << "[train]\n"
     << "lr_max = " << fmt_double(c.lr_max) << "\n"
     << "lr_min = " << fmt_double(c.lr_min) << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "epochs = " << c.epochs << "\n"
     << "adam_betas = " << fmt_double(c.adam.beta1) << "," << fmt_double(c.adam.beta2) << "\n"
     << "adam_eps = " << fmt_double(c.adam.eps) << "\n"
     << "seed = " << c.seed << "\n"
     << "schedule = " << (c.schedule == Schedule::cosine ? "cosine" : "constant") << "\n"
     << "weight_decay = " << fmt_double(c.weight_decay) << "\n"
     << "grad_clip = " << fmt_double(c.grad_clip) << "\n"
     << "workers = " << c.workers << "\n"
     << "max_skip_fraction = " << fmt_double(c.max_skip_fraction) << "\n";
  os << "\n[augment]\n"
     << "crop_size = " << c.augment.crop_size << "\n"
     << "flip_prob = " << fmt_double(c.augment.flip_prob) << "\n"
     << "cutout = "
     << (c.augment.cutout ? std::to_string(c.augment.cutout->n_holes) + "," + std::to_string(c.augment.cutout->hole_size)
                          : std::string("none"))
     << "\n"
     << "mixup = " << (c.augment.mixup ? "true" : "false") << "\n"
     << "mixup_alpha = " << fmt_double(c.augment.mixup_alpha) << "\n"
     << "mixup_per_sample = " << (c.augment.mixup_per_sample ? "true" : "false") << "\n"
     << "smoothing_eps = " << fmt_double(c.augment.smoothing_eps) << "\n";
  os << "\n[model]\n"
     << "input_size = " << c.model.input_size << "\n"
     << "num_classes = " << c.model.num_classes << "\n"
     << "frontend_channels = " << c.model.frontend_channels << "\n"
     << "frontend_temporal_kernel = " << c.model.frontend_temporal_kernel << "\n"
     << "frontend_spatial_kernel = " << c.model.frontend_spatial_kernel << "\n"
     << "stage_widths = " << detail::join(c.model.stage_widths) << "\n"
     << "blocks_per_stage = " << detail::join(c.model.blocks_per_stage) << "\n"
     << "radix = " << c.model.radix << "\n"
     << "rnn_hidden = " << c.model.rnn_hidden << "\n"
     << "rnn_layers = " << c.model.rnn_layers << "\n"
     << "bidirectional = " << (c.model.bidirectional ? "true" : "false") << "\n"
     << "dropblock = " << c.model.dropblock.block_size << "," << fmt_double(c.model.dropblock.drop_rate) << "\n";
  return os.str();
}

inline TrainConfig read_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_config(text);
}

}  // namespace lrwr
