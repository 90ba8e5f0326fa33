#pragma once

// Training state and its checkpoint container.
//
// Checkpoint layout (little-endian):
//
//   "LRWRCKPT"                      8 bytes magic
//   version u32 = 1
//   dtype   u8  (0 = float32, 1 = float64), 3 reserved zero bytes
//   config  u64 length + UTF-8 text (config.hpp format)
//   step u64, epoch u64, best_test_acc f64
//   rng     u64 length + text (std::mt19937_64 stream state)
//   metric rows: u64 count, then per row
//           epoch u64, step u64, lr f64, train_loss f64, test_acc f64
//   three tensor groups in order params, adam_m, adam_v; each group is
//           u64 count, then per tensor
//           u32 name length, name bytes, u32 rank, u64 dims[rank],
//           payload numel * (4 or 8) bytes
//   adam step u64
//   "ENDC"                          4 bytes trailer
//
// A file that is truncated, has trailing bytes, or a different version is
// rejected with FormatError before any state is returned.

#include <cstdio>
#include <string>
#include <type_traits>
#include <vector>

#include "lrwr/config.hpp"
#include "lrwr/errors.hpp"
#include "lrwr/io.hpp"
#include "lrwr/optim.hpp"
#include "lrwr/rng.hpp"

namespace lrwr {

struct MetricRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_acc = 0.0;
  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

inline constexpr std::string_view kMetricHeader = "epoch,step,lr,train_loss,test_acc";

inline std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out(kMetricHeader);
  out += '\n';
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9e,%.9e,%.6f\n", r.epoch, r.step, r.lr, r.train_loss, r.test_acc);
    out += buf;
  }
  return out;
}

template <typename T>
struct TrainState {
  nn::ParamSet<T> params;
  AdamState<T> adam;
  std::size_t step = 0;
  std::size_t epoch = 0;
  Rng rng;
  double best_test_acc = -1.0;
  std::vector<MetricRow> metrics;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_tensors(ByteWriter& w, const nn::ParamSet<T>& set) {
  w.u64(set.size());
  for (const auto& [name, t] : set) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(d);
    for (T v : t.data) {
      if constexpr (std::is_same_v<T, float>)
        w.f32(v);
      else
        w.f64(v);
    }
  }
}

template <typename T>
nn::ParamSet<T> read_tensors(ByteReader& r) {
  nn::ParamSet<T> set;
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.u32();
    std::string name(r.raw(name_len));
    const auto rank = r.u32();
    if (rank > 8) throw FormatError("checkpoint: implausible tensor rank for " + name);
    std::vector<std::size_t> shape(rank);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.u64());
      if (d != 0 && numel > (1ULL << 40) / d) throw FormatError("checkpoint: tensor too large: " + name);
      numel *= d;
    }
    if (numel * sizeof(T) > r.remaining()) throw FormatError("checkpoint: truncated tensor " + name);
    nn::Tensor<T> t(shape);
    for (auto& v : t.data) {
      if constexpr (std::is_same_v<T, float>)
        v = r.f32();
      else
        v = r.f64();
    }
    if (!set.emplace(std::move(name), std::move(t)).second) throw FormatError("checkpoint: duplicate tensor");
  }
  return set;
}

}  // namespace detail

template <typename T>
constexpr std::uint8_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 0 : 1;
}

template <typename T>
std::string encode_checkpoint(const TrainState<T>& s, const TrainConfig& cfg) {
  ByteWriter w;
  w.raw("LRWRCKPT");
  w.u32(kCheckpointVersion);
  w.u8(dtype_code<T>());
  w.u8(0);
  w.u16(0);
  w.str(serialize_config(cfg));
  w.u64(s.step);
  w.u64(s.epoch);
  w.f64(s.best_test_acc);
  w.str(s.rng.state());
  w.u64(s.metrics.size());
  for (const auto& m : s.metrics) {
    w.u64(m.epoch);
    w.u64(m.step);
    w.f64(m.lr);
    w.f64(m.train_loss);
    w.f64(m.test_acc);
  }
  detail::write_tensors(w, s.params);
  detail::write_tensors(w, s.adam.m);
  detail::write_tensors(w, s.adam.v);
  w.u64(s.adam.step);
  w.raw("ENDC");
  return w.take();
}

template <typename T>
struct LoadedCheckpoint {
  TrainState<T> state;
  TrainConfig config;
};

template <typename T>
LoadedCheckpoint<T> decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.raw(8) != "LRWRCKPT") throw FormatError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: version " + std::to_string(version) + " not supported");
  if (r.u8() != dtype_code<T>()) throw FormatError("checkpoint: stored precision does not match requested type");
  r.u8();
  r.u16();
  LoadedCheckpoint<T> out;
  try {
    out.config = parse_config(r.str());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: embedded config: ") + e.what());
  }
  auto& s = out.state;
  s.step = r.u64();
  s.epoch = r.u64();
  s.best_test_acc = r.f64();
  s.rng.set_state(r.str());
  const auto rows = r.u64();
  if (rows > r.remaining() / 40) throw FormatError("checkpoint: truncated metric log");
  for (std::uint64_t i = 0; i < rows; ++i) {
    MetricRow m;
    m.epoch = r.u64();
    m.step = r.u64();
    m.lr = r.f64();
    m.train_loss = r.f64();
    m.test_acc = r.f64();
    s.metrics.push_back(m);
  }
  s.params = detail::read_tensors<T>(r);
  s.adam.m = detail::read_tensors<T>(r);
  s.adam.v = detail::read_tensors<T>(r);
  s.adam.step = r.u64();
  if (r.raw(4) != "ENDC") throw FormatError("checkpoint: missing trailer");
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  return out;
}

template <typename T>
void save_checkpoint(const TrainState<T>& s, const TrainConfig& cfg, const fs::path& path) {
  atomic_write(path, encode_checkpoint(s, cfg));
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const fs::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return decode_checkpoint<T>(bytes);
}

}  // namespace lrwr
