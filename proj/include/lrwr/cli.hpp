#pragma once

// Command-line entry points. run_cli parses argv-style arguments and
// dispatches to one subcommand:
//
//   synth       --classes --samples --frames --size --seed --out
//   build       --pool --per-class --test-per-class --min-count --upsample-to --seed --out
//   preprocess  --frames-dir --landmarks --out --min-iou
//   train       --config --data --out
//   eval        --checkpoint --data [--csv]
//
// Exit codes: 0 success, 2 bad arguments or config, 1 any other failure.
// LRWR_SEED, when set, overrides the seed given in a training config.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lrwr/checkpoint.hpp"
#include "lrwr/config.hpp"
#include "lrwr/dataset.hpp"
#include "lrwr/eval.hpp"
#include "lrwr/manifest.hpp"
#include "lrwr/preprocess.hpp"
#include "lrwr/training.hpp"

namespace lrwr {

// Precision used by the command-line pipeline.
using CliReal = float;

struct CommandResult {
  int exit_code = 0;
  std::string summary;
};

inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// A --data argument names a manifest file or a directory holding manifest.tsv.
inline fs::path manifest_path_for(const fs::path& data) {
  return fs::is_directory(data) ? data / "manifest.tsv" : data;
}

/// Applies LRWR_SEED to cfg.seed if set. Throws ConfigError if malformed.
inline void apply_seed_override(TrainConfig& cfg, const char* env = std::getenv("LRWR_SEED")) {
  if (!env) return;
  cfg.seed = detail::cfg_uint("LRWR_SEED", detail::trim(env));
}

inline CommandResult cmd_synth(const SyntheticSpec& spec, const fs::path& out, std::ostream& os) {
  const auto m = generate_synthetic(spec, out);
  std::ostringstream s;
  s << "wrote " << m.records.size() << " samples (" << m.split(Split::train).size() << " train, "
    << m.split(Split::test).size() << " test) in " << m.classes.size() << " classes to " << out.string();
  os << s.str() << "\n";
  return {0, s.str()};
}

struct BuildOptions {
  fs::path pool;
  std::size_t per_class = 500;
  std::size_t test_per_class = 50;
  std::size_t min_count = 500;
  std::optional<std::size_t> upsample_to;
  std::uint64_t seed = 0;
  fs::path out;
};

inline CommandResult cmd_build(const BuildOptions& o, std::ostream& os) {
  const fs::path pool_file = manifest_path_for(o.pool);
  Manifest pool = read_manifest(pool_file);
  rebase_clip_paths(pool, pool_file.parent_path(), fs::path{});
  for (auto& r : pool.records) r.split = Split::train;
  const Manifest filtered = filter_classes(pool, o.min_count);
  Manifest m = balance_and_split(filtered, o.per_class, o.test_per_class, o.seed);
  if (o.upsample_to) m = upsample(m, unused_records(filtered, m), *o.upsample_to, o.seed);
  const fs::path out_file = fs::is_directory(o.out) || o.out.extension().empty() ? o.out / "manifest.tsv" : o.out;
  const fs::path out_dir = out_file.parent_path().empty() ? fs::path(".") : out_file.parent_path();
  fs::create_directories(out_dir);
  rebase_clip_paths(m, fs::path("."), out_dir);
  write_manifest(m, out_file);
  std::ostringstream s;
  s << "wrote " << out_file.string() << ": " << m.classes.size() << " classes, " << m.split(Split::train).size()
    << " train, " << m.split(Split::test).size() << " test";
  os << s.str() << "\n";
  return {0, s.str()};
}

inline CommandResult cmd_preprocess(const fs::path& frames_dir, const fs::path& landmarks, const fs::path& out,
                                    double min_iou, std::ostream& os, std::ostream& err) {
  PreprocessOptions opts;
  opts.min_iou = min_iou;
  const auto sum = preprocess_directory(frames_dir, landmarks, out, opts, &err);
  std::ostringstream s;
  s << "kept " << sum.kept << " of " << sum.total() << " clips (" << sum.motion_rejected << " motion, "
    << sum.quality_rejected << " quality, " << sum.failed << " unreadable)";
  os << s.str() << "\n";
  if (sum.total() == 0) return {kExitFailure, "no .lrwr clips in " + frames_dir.string()};
  if (sum.failed == sum.total()) return {kExitFailure, s.str()};
  return {0, s.str()};
}

inline CommandResult cmd_train(const fs::path& config, const fs::path& data, const fs::path& out, std::ostream& os,
                               std::ostream& err) {
  TrainConfig cfg = read_config(config);
  apply_seed_override(cfg);
  const fs::path mpath = manifest_path_for(data);
  const Manifest m = read_manifest(mpath);
  TrainOptions opts;
  opts.log = &err;
  opts.on_epoch = [&](const MetricRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu  step %zu  lr %.3e  loss %.4f  test_acc %.4f", r.epoch, r.step, r.lr,
                  r.train_loss, r.test_acc);
    os << buf << std::endl;
  };
  const auto res = train<CliReal>(m, mpath.parent_path(), cfg, out, opts);
  std::ostringstream s;
  if (res.state.metrics.empty()) {
    s << "no epochs run; metrics in " << (out / kMetricsFile).string();
  } else {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", res.state.metrics.back().test_acc);
    s << "top1=" << buf << " after " << res.state.epoch << " epochs; checkpoints in " << out.string();
  }
  os << s.str() << "\n";
  return {0, s.str()};
}

inline CommandResult cmd_eval(const fs::path& checkpoint, const fs::path& data, bool csv, std::ostream& os) {
  const auto ck = load_checkpoint<CliReal>(checkpoint);
  const fs::path mpath = manifest_path_for(data);
  const Manifest m = read_manifest(mpath);
  ALNConfig model = ck.config.model;
  if (model.num_classes != m.num_classes())
    throw DomainError("eval: checkpoint has " + std::to_string(model.num_classes) + " classes, manifest has " +
                      std::to_string(m.num_classes()));
  const auto rep = evaluate(ck.state.params, model, m, mpath.parent_path());
  os << emit_report(rep, csv ? ReportFormat::csv : ReportFormat::text);
  char buf[64];
  std::snprintf(buf, sizeof buf, "top1=%.6f", rep.top1);
  return {0, buf};
}

/// Parses args (args[0] is the program name) and runs the chosen command.
inline CommandResult run_cli(const std::vector<std::string>& args, std::ostream& os = std::cout,
                             std::ostream& err = std::cerr) {
  CLI::App app{"Word-level lipreading toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  SyntheticSpec spec;
  fs::path synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic clip corpus");
  synth->add_option("--classes", spec.classes)->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));
  synth->add_option("--samples", spec.samples_per_class)->check(CLI::PositiveNumber);
  synth->add_option("--frames", spec.frames)->check(CLI::PositiveNumber);
  synth->add_option("--size", spec.size)->check(CLI::Range(std::size_t{4}, std::size_t{4096}));
  synth->add_option("--seed", spec.seed);
  synth->add_option("--out", synth_out)->required();

  BuildOptions bo;
  std::size_t upsample_to = 0;
  auto* build = app.add_subcommand("build", "filter, balance and split a pool manifest");
  build->add_option("--pool", bo.pool)->required();
  build->add_option("--per-class", bo.per_class)->check(CLI::PositiveNumber);
  build->add_option("--test-per-class", bo.test_per_class);
  build->add_option("--min-count", bo.min_count);
  auto* up_opt = build->add_option("--upsample-to", upsample_to)->check(CLI::PositiveNumber);
  build->add_option("--seed", bo.seed);
  build->add_option("--out", bo.out)->required();

  fs::path frames_dir, landmarks_dir, pre_out;
  double min_iou = kDefaultMinIou;
  auto* pre = app.add_subcommand("preprocess", "align, crop and filter full-frame clips");
  pre->add_option("--frames-dir", frames_dir)->required();
  pre->add_option("--landmarks", landmarks_dir)->required();
  pre->add_option("--out", pre_out)->required();
  pre->add_option("--min-iou", min_iou)->check(CLI::Range(0.0, 1.0));

  fs::path config, train_data, train_out;
  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", config)->required();
  tr->add_option("--data", train_data)->required();
  tr->add_option("--out", train_out)->required();

  fs::path checkpoint, eval_data;
  bool csv = false;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a test split");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--data", eval_data)->required();
  ev->add_flag("--csv", csv, "emit the report as CSV");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  if (argv.empty()) argv.push_back("lrwr");
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    os << app.help();
    return {0, "help"};
  } catch (const CLI::CallForAllHelp&) {
    os << app.help("", CLI::AppFormatMode::All);
    return {0, "help"};
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return {kExitUsage, e.what()};
  }

  try {
    if (synth->parsed()) {
      if (spec.classes > synthetic_max_classes(spec.frames))
        return err << "error: --classes " << spec.classes << " exceeds " << synthetic_max_classes(spec.frames)
                   << " for --frames " << spec.frames << "\n",
               CommandResult{kExitUsage, "too many classes for frame count"};
      return cmd_synth(spec, synth_out, os);
    }
    if (build->parsed()) {
      if (bo.test_per_class >= bo.per_class) {
        err << "error: --test-per-class must be smaller than --per-class\n";
        return {kExitUsage, "--test-per-class must be smaller than --per-class"};
      }
      if (up_opt->count()) bo.upsample_to = upsample_to;
      return cmd_build(bo, os);
    }
    if (pre->parsed()) return cmd_preprocess(frames_dir, landmarks_dir, pre_out, min_iou, os, err);
    if (tr->parsed()) return cmd_train(config, train_data, train_out, os, err);
    if (ev->parsed()) return cmd_eval(checkpoint, eval_data, csv, os);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return {kExitUsage, e.what()};
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return {kExitFailure, e.what()};
  }
  return {kExitUsage, "no command"};
}

}  // namespace lrwr
