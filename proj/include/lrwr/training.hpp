#pragma once

// Training loop: seeded shuffling, crop/flip/cutout per clip, MixUp and
// label smoothing per batch, Adam with a cosine (or constant) schedule,
// per-epoch evaluation and checkpointing.
//
// All randomness comes from TrainState::rng in a fixed order, so a run is a
// deterministic function of (manifest, config). Per-sample augmentation and
// DropBlock streams are derived from draws of that master stream, which
// keeps results independent of the order in which workers finish. The
// gradient reduction is summed per worker chunk and then in worker order, so
// float results depend on the worker count but not on thread timing.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "lrwr/augment.hpp"
#include "lrwr/checkpoint.hpp"
#include "lrwr/config.hpp"
#include "lrwr/eval.hpp"
#include "lrwr/manifest.hpp"
#include "lrwr/model.hpp"
#include "lrwr/optim.hpp"

namespace lrwr {

struct TrainOptions {
  // Resume from checkpoint_dir/latest.ckpt when it exists and was written
  // with the same configuration.
  bool resume = true;
  // Stop after this many completed epochs (simulates an interruption).
  std::optional<std::size_t> stop_after_epoch;
  // Receives each finished metric row.
  std::function<void(const MetricRow&)> on_epoch;
  // Ends training early once it returns true for a finished epoch.
  std::function<bool(const MetricRow&)> stop_when;
  std::ostream* log = &std::cerr;
};

template <typename T>
struct TrainResult {
  TrainState<T> state;
  TrainConfig config;  // num_classes resolved
  bool resumed = false;
};

inline constexpr std::string_view kLatestCheckpoint = "latest.ckpt";
inline constexpr std::string_view kBestCheckpoint = "best.ckpt";
inline constexpr std::string_view kMetricsFile = "metrics.csv";

template <typename T>
TrainState<T> initial_state(const TrainConfig& cfg) {
  TrainState<T> s;
  s.params = init_params<T>(cfg.model, cfg.seed);
  s.adam = AdamState<T>::zeros_for(s.params);
  s.rng = Rng(mix_seed(cfg.seed, {0x7472616E}));
  return s;
}

inline double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (cfg.schedule == Schedule::constant) return cfg.lr_max;
  return cosine_lr(std::min(step, total_steps), std::max<std::size_t>(total_steps, 1), cfg.lr_max, cfg.lr_min);
}

namespace detail {

struct LoadedSample {
  Clip clip;
  int label = 0;
};

inline std::vector<LoadedSample> load_split(const Manifest& m, const fs::path& dir, Split split,
                                            double max_skip_fraction, std::ostream* log) {
  const auto records = m.split(split);
  std::vector<LoadedSample> out;
  std::size_t skipped = 0;
  for (const auto* r : records) {
    try {
      out.push_back({read_clip(resolve_clip_path(dir, r->clip_path)), r->class_id});
    } catch (const std::exception& e) {
      ++skipped;
      if (log) *log << "warning: skipping " << r->clip_path << ": " << e.what() << "\n";
    }
  }
  if (!records.empty() &&
      static_cast<double>(skipped) > max_skip_fraction * static_cast<double>(records.size()))
    throw FormatError("train: " + std::to_string(skipped) + " of " + std::to_string(records.size()) + " " +
                      std::string(to_string(split)) + " clips unreadable, above the allowed fraction");
  return out;
}

}  // namespace detail

/// Runs forward and backward for one prepared batch, returning the mean loss
/// and writing the mean gradient into `grads`.
template <typename T>
double batch_gradient(const ParamSet<T>& params, const ALNConfig& model, const std::vector<std::vector<T>>& inputs,
                      const std::vector<std::size_t>& frames, const std::vector<LabelDistribution>& targets,
                      const std::vector<std::uint64_t>& dropblock_seeds, std::size_t workers, ParamSet<T>& grads) {
  const std::size_t B = inputs.size();
  workers = std::clamp<std::size_t>(workers, 1, B);
  std::vector<ParamSet<T>> partial(workers);
  std::vector<double> losses(B, 0.0);
  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](std::size_t w) {
    try {
      partial[w] = nn::zeros_like(params);
      const std::size_t lo = w * B / workers, hi = (w + 1) * B / workers;
      for (std::size_t i = lo; i < hi; ++i) {
        Rng rng(dropblock_seeds[i]);
        ForwardCache<T> cache;
        const auto out = forward_sample<T>(params, model, inputs[i], frames[i], Mode::train, &rng, &cache);
        double l = 0;
        for (std::size_t k = 0; k < targets[i].size(); ++k)
          l -= targets[i].probs[k] * static_cast<double>(out.pooled(static_cast<Eigen::Index>(k)));
        losses[i] = l;
        backward_sample<T>(params, model, cache, loss_gradient<T>(targets[i], B), partial[w]);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  grads = std::move(partial[0]);
  for (std::size_t w = 1; w < workers; ++w) nn::accumulate(grads, partial[w]);
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(B);
}

/// Trains on the train split of `manifest` (clip paths relative to
/// manifest_dir), evaluating on its test split after every epoch. Writes
/// latest.ckpt, best.ckpt and metrics.csv into checkpoint_dir.
template <typename T>
TrainResult<T> train(const Manifest& manifest, const fs::path& manifest_dir, TrainConfig cfg,
                     const fs::path& checkpoint_dir, const TrainOptions& opts = {}) {
  const std::size_t K = manifest.num_classes();
  if (cfg.model.num_classes == 0) cfg.model.num_classes = K;
  if (cfg.model.num_classes != K)
    throw ConfigError("train: model.num_classes " + std::to_string(cfg.model.num_classes) + " but manifest has " +
                      std::to_string(K) + " classes");
  cfg.validate();
  cfg.model.validate();

  TrainResult<T> result;
  result.config = cfg;
  TrainState<T>& state = result.state;

  const fs::path latest = checkpoint_dir / kLatestCheckpoint;
  bool resumed = false;
  if (opts.resume && fs::exists(latest)) {
    auto loaded = load_checkpoint<T>(latest);
    if (loaded.config == cfg) {
      state = std::move(loaded.state);
      resumed = true;
    } else if (opts.log) {
      *opts.log << "note: " << latest.string() << " was written with a different config; starting fresh\n";
    }
  }
  if (!resumed) state = initial_state<T>(cfg);
  result.resumed = resumed;
  fs::create_directories(checkpoint_dir);

  if (cfg.epochs == 0 || state.epoch >= cfg.epochs) {
    atomic_write(checkpoint_dir / kMetricsFile, metrics_csv(state.metrics));
    if (!resumed) save_checkpoint(state, cfg, latest);
    return result;
  }

  const auto train_set = detail::load_split(manifest, manifest_dir, Split::train, cfg.max_skip_fraction, opts.log);
  if (train_set.empty()) throw DomainError("train: manifest has no readable train records");
  if (manifest.split(Split::test).empty()) throw DomainError("train: manifest has no test records");
  const auto eval_records = detail::load_split(manifest, manifest_dir, Split::test, cfg.max_skip_fraction, opts.log);
  EvalSet<T> eval_set;
  for (const auto& s : eval_records) {
    const Clip c = center_crop(s.clip, cfg.model.input_size);
    eval_set.inputs.push_back(normalize_clip<T>(c));
    eval_set.frames.push_back(c.frames());
    eval_set.labels.push_back(static_cast<std::size_t>(s.label));
  }
  if (eval_set.inputs.empty()) throw DomainError("train: no readable test records");

  const std::size_t n = train_set.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  const auto& aug = cfg.augment;

  while (state.epoch < cfg.epochs) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    state.rng.shuffle(order);
    double loss_sum = 0.0;
    double lr = cfg.lr_max;
    for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
      const std::size_t B = std::min(cfg.batch_size, n - b0);
      std::vector<std::vector<T>> inputs(B);
      std::vector<std::size_t> frames(B);
      std::vector<int> labels(B);
      for (std::size_t i = 0; i < B; ++i) {
        const auto& s = train_set[order[b0 + i]];
        Rng srng(state.rng.next_u64());
        const Clip c = augment_clip(s.clip, aug, srng);
        inputs[i] = normalize_clip<T>(c);
        frames[i] = c.frames();
        labels[i] = s.label;
      }
      std::vector<LabelDistribution> targets(B);
      if (aug.mixup && B > 1) {
        std::vector<std::size_t> perm(B);
        std::iota(perm.begin(), perm.end(), 0);
        state.rng.shuffle(perm);
        std::vector<std::vector<T>> inputs_b(B);
        std::vector<int> labels_b(B);
        for (std::size_t i = 0; i < B; ++i) {
          if (frames[perm[i]] != frames[i]) perm[i] = i;  // only mix equal-length clips
          inputs_b[i] = inputs[perm[i]];
          labels_b[i] = labels[perm[i]];
        }
        auto mixed = mixup<T>(inputs, labels, inputs_b, labels_b, K, aug.mixup_alpha, state.rng, aug.mixup_per_sample);
        inputs = std::move(mixed.inputs);
        for (std::size_t i = 0; i < B; ++i) targets[i] = label_smooth(mixed.targets[i], aug.smoothing_eps);
      } else {
        for (std::size_t i = 0; i < B; ++i)
          targets[i] = label_smooth(static_cast<std::size_t>(labels[i]), K, aug.smoothing_eps);
      }
      std::vector<std::uint64_t> drop_seeds(B);
      for (auto& d : drop_seeds) d = state.rng.next_u64();

      ParamSet<T> grads;
      loss_sum += batch_gradient<T>(state.params, cfg.model, inputs, frames, targets, drop_seeds, cfg.workers, grads);
      if (cfg.weight_decay > 0)
        for (auto& [name, g] : grads) {
          const auto& p = state.params.at(name).data;
          for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += static_cast<T>(cfg.weight_decay) * p[i];
        }
      if (cfg.grad_clip > 0) clip_gradient_norm(grads, cfg.grad_clip);
      lr = scheduled_lr(cfg, state.step, total_steps);
      adam_step(state.params, state.adam, grads, lr, cfg.adam);
      ++state.step;
    }

    const EvalReport rep = evaluate_set(state.params, cfg.model, manifest.classes, eval_set);
    ++state.epoch;
    MetricRow row{state.epoch, state.step, lr, loss_sum / static_cast<double>(steps_per_epoch), rep.top1};
    state.metrics.push_back(row);
    const bool best = rep.top1 > state.best_test_acc;
    if (best) state.best_test_acc = rep.top1;
    save_checkpoint(state, cfg, latest);
    if (best) save_checkpoint(state, cfg, checkpoint_dir / kBestCheckpoint);
    atomic_write(checkpoint_dir / kMetricsFile, metrics_csv(state.metrics));
    if (opts.on_epoch) opts.on_epoch(row);
    if (opts.stop_after_epoch && state.epoch >= *opts.stop_after_epoch) break;
    if (opts.stop_when && opts.stop_when(row)) break;
  }
  return result;
}

}  // namespace lrwr
