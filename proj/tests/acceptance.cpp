// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

#include "gradcheck.hpp"
#include "lrwr/augment.hpp"
#include "lrwr/cli.hpp"
#include "lrwr/geometry.hpp"
#include "lrwr/optim.hpp"
#include "lrwr/training.hpp"
#include "test_util.hpp"

using namespace lrwr;

namespace {

// Pinned tolerances and limits.
constexpr double kAlignYDelta = 0.5;
constexpr double kIouTol = 1e-6;
constexpr double kMixTol = 1e-6;
constexpr double kFlipLo = 0.48, kFlipHi = 0.52;
constexpr double kGradRelErr = 1e-3;
constexpr double kScheduleTol = 1e-12;
constexpr double kAdamTol = 1e-12;
constexpr double kToyAccuracy = 0.9;
constexpr double kOverfitLoss = 1e-2;
constexpr std::size_t kOverfitSteps = 500;
constexpr double kOracleSeconds = 1.0;
constexpr double kGradSeconds = 300.0;
constexpr double kToySeconds = 1200.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path toy_config_path() { return fs::path(LRWR_SOURCE_DIR) / "configs" / "toy.ini"; }

int cli(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "lrwr");
  std::ostringstream os, es;
  const int code = run_cli(args, os, es).exit_code;
  if (out) *out = os.str();
  if (code != 0) std::cerr << es.str();
  return code;
}

// 1. crop-size rule against a separate one-line oracle
Outcome crop_rule_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  std::size_t mismatches = 0, out_of_bounds = 0;
  for (int i = 0; i < 1000; ++i) {
    const double d = rng.uniform(0.5, 150), xl = rng.uniform(-400, 400), xr = rng.uniform(-400, 400);
    const double w = crop_side_length(d, xl, xr);
    const double oracle = (1.05 * xr - 0.95 * xl) < 1.5 * d   ? 1.5 * d
                          : (1.05 * xr - 0.95 * xl) > 3.0 * d ? 3.0 * d
                                                              : 1.05 * xr - 0.95 * xl;
    mismatches += w != oracle;
    out_of_bounds += !(w >= 1.5 * d && w <= 3.0 * d);
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && out_of_bounds == 0 && secs < kOracleSeconds,
          std::to_string(mismatches) + " mismatches, " + std::to_string(out_of_bounds) + " out of bounds, " +
              fmt("%.4f s", secs)};
}

// Exact area for integer boxes by counting unit pixels.
double raster_iou(const BoundingBox& a, const BoundingBox& b) {
  std::size_t inter = 0, uni = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const double cx = x + 0.5, cy = y + 0.5;
      const bool in_a = cx > a.x0 && cx < a.x1 && cy > a.y0 && cy < a.y1;
      const bool in_b = cx > b.x0 && cx < b.x1 && cy > b.y0 && cy < b.y1;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

// 2. alignment and IoU
Outcome geometry() {
  Rng rng(7);
  double worst_dy = 0;
  for (int i = 0; i < 100; ++i) {
    const double angle = rng.uniform(-1.2, 1.2), half = rng.uniform(5, 20);
    const Point2 c{rng.uniform(30, 50), rng.uniform(30, 50)};
    const double ca = std::cos(angle), sa = std::sin(angle);
    FrameLandmarks lm{{c.x - half * ca, c.y - half * sa}, {c.x + half * ca, c.y + half * sa}, c,
                      {c.x + 15 * sa, c.y - 15 * ca}};
    Clip clip(1, 80, 80, 128);
    const auto [out, lms] = align_rotation(clip, std::span(&lm, 1));
    worst_dy = std::max(worst_dy, std::abs(lms[0].left_lip_corner.y - lms[0].right_lip_corner.y));
  }
  double worst_iou = 0;
  for (int i = 0; i < 200; ++i) {
    auto box = [&] {
      const double x0 = static_cast<double>(rng.uniform_int(50)), y0 = static_cast<double>(rng.uniform_int(50));
      return BoundingBox{x0, y0, x0 + 1 + static_cast<double>(rng.uniform_int(13)),
                         y0 + 1 + static_cast<double>(rng.uniform_int(13))};
    };
    const auto a = box(), b = box();
    worst_iou = std::max(worst_iou, std::abs(iou(a, b) - raster_iou(a, b)));
  }
  return {worst_dy < kAlignYDelta && worst_iou <= kIouTol,
          "max lip y-delta " + fmt("%.3g px", worst_dy) + ", max IoU error " + fmt("%.3g", worst_iou)};
}

// 3. filter / balance / split / upsample through the build command
Outcome dataset_protocol() {
  test::TempDir pool("acc_pool"), out("acc_build");
  if (cli({"synth", "--classes", "4", "--samples", "520", "--frames", "6", "--size", "8", "--out",
           pool.path().string()}) != 0)
    return {false, "synth failed"};
  const auto build = [&](const std::string& name, bool up) {
    std::vector<std::string> a{"build", "--pool", pool.path().string(), "--out", (out / name).string()};
    if (up) a.insert(a.end(), {"--upsample-to", "750"});
    return cli(a);
  };
  if (build("a", false) || build("b", false) || build("up_a", true) || build("up_b", true))
    return {false, "build failed"};
  const auto a = read_manifest(out / "a" / "manifest.tsv");
  const auto up = read_manifest(out / "up_a" / "manifest.tsv");
  std::map<std::pair<int, Split>, std::size_t> ca, cu;
  for (const auto& r : a.records) ++ca[{r.class_id, r.split}];
  for (const auto& r : up.records) ++cu[{r.class_id, r.split}];
  bool counts_ok = a.classes.size() == 4 && ca.size() == 8;
  for (const auto& [k, n] : ca) counts_ok = counts_ok && n == (k.second == Split::train ? 450u : 50u);
  bool up_ok = cu.size() == 8;
  for (const auto& [k, n] : cu) up_ok = up_ok && n == (k.second == Split::train ? 750u : 50u);
  std::vector<SampleRecord> test_a, test_up;
  for (const auto* r : a.split(Split::test)) test_a.push_back(*r);
  for (const auto* r : up.split(Split::test)) test_up.push_back(*r);
  const bool test_same = test_a == test_up;
  const bool bytes_same = read_file(out / "a" / "manifest.tsv") == read_file(out / "b" / "manifest.tsv") &&
                          read_file(out / "up_a" / "manifest.tsv") == read_file(out / "up_b" / "manifest.tsv");
  return {counts_ok && up_ok && test_same && bytes_same,
          std::string("450/50 ") + (counts_ok ? "ok" : "wrong") + ", 750 upsample " + (up_ok ? "ok" : "wrong") +
              ", test split " + (test_same ? "untouched" : "changed") + ", reruns " +
              (bytes_same ? "byte-identical" : "differ")};
}

// 4. augmentation invariants
Outcome augmentation() {
  std::vector<std::string> bad;
  Rng rng(11);
  Clip marker(8, 112, 112, 10);
  std::vector<std::pair<std::size_t, std::size_t>> where;
  for (std::size_t t = 0; t < 8; ++t) {
    const std::size_t y = 30 + 5 * t, x = 40 + 3 * t;
    marker.at(t, y, x) = 255;
    where.emplace_back(y, x);
  }
  const auto find = [](const Clip& c, std::size_t t) {
    for (std::size_t y = 0; y < c.height(); ++y)
      for (std::size_t x = 0; x < c.width(); ++x)
        if (c.at(t, y, x) == 255) return std::pair{y, x};
    return std::pair{SIZE_MAX, SIZE_MAX};
  };
  for (int trial = 0; trial < 100; ++trial) {
    const Clip c = random_crop_consistent(marker, 88, rng);
    const auto [y0, x0] = find(c, 0);
    for (std::size_t t = 1; t < 8; ++t) {
      const auto [y, x] = find(c, t);
      if (where[t].first - y != where[0].first - y0 || where[t].second - x != where[0].second - x0)
        bad.push_back("crop offset differs across frames");
    }
    const Clip f = horizontal_flip(marker, 0.5, rng);
    std::size_t mirrored = 0;
    for (std::size_t t = 0; t < 8; ++t) mirrored += find(f, t).second == 111 - where[t].second;
    if (mirrored != 0 && mirrored != 8) bad.push_back("partial flip");
    const Clip k = cutout(Clip(8, 112, 112, 200), 1, 32, rng);
    for (std::size_t t = 1; t < 8; ++t)
      if (!std::equal(k.frame(t).begin(), k.frame(t).end(), k.frame(0).begin())) bad.push_back("cutout moves");
  }
  double worst_sum = 0;
  std::vector<std::vector<double>> xa(16, std::vector<double>(4, 1.0)), xb(16, std::vector<double>(4, -1.0));
  std::vector<int> la, lb;
  for (int i = 0; i < 16; ++i) la.push_back(i % 7), lb.push_back((i * 3) % 7);
  for (int rep = 0; rep < 50; ++rep) {
    const auto m = mixup<double>(xa, la, xb, lb, 7, 0.4, rng, rep % 2 == 1);
    for (const auto& t : m.targets) {
      worst_sum = std::max(worst_sum, std::abs(t.sum() - 1.0));
      worst_sum = std::max(worst_sum, std::abs(label_smooth(t, 0.1).sum() - 1.0));
    }
    worst_sum = std::max(worst_sum, std::abs(label_smooth(static_cast<std::size_t>(rep % 7), 7, 0.1).sum() - 1.0));
  }
  if (worst_sum > kMixTol) bad.push_back("target sum off by " + fmt("%.3g", worst_sum));
  Rng frng(2024);
  Clip tiny(1, 1, 2);
  tiny.at(0, 0, 0) = 1;
  int flips = 0;
  for (int i = 0; i < 10000; ++i) flips += horizontal_flip(tiny, 0.5, frng).at(0, 0, 1) == 1;
  const double freq = flips / 10000.0;
  if (!(freq >= kFlipLo && freq <= kFlipHi)) bad.push_back("flip frequency " + fmt("%.4f", freq));
  return {bad.empty(), bad.empty() ? "crop/flip/cutout consistent, target sums within " + fmt("%.1g", worst_sum) +
                                         ", flip frequency " + fmt("%.4f", freq)
                                   : bad.front()};
}

// 5. finite-difference gradient check, double precision
Outcome gradient_check() {
  const auto t0 = Clock::now();
  const auto cfg = test::tiny_config();
  const auto p = test::perturbed_params(cfg, 1);
  const auto errs = test::gradient_check(p, cfg, 4, 101);
  double worst = 0;
  std::string worst_name;
  for (const auto& [name, e] : errs)
    if (e >= worst) worst = e, worst_name = name;
  bool conv3d = false, splat = false, rnn = false, head = false;
  for (const auto& [name, e] : errs) {
    conv3d |= name == "frontend.conv.weight";
    splat |= name.find(".splat.") != std::string::npos;
    rnn |= name.starts_with("rnn.");
    head |= name.starts_with("head.");
  }
  const double secs = seconds_since(t0);
  return {worst < kGradRelErr && conv3d && splat && rnn && head && errs.size() == p.size() && secs < kGradSeconds,
          std::to_string(errs.size()) + " tensors, max rel error " + fmt("%.2e", worst) + " (" + worst_name + "), " +
              fmt("%.1f s", secs)};
}

// 6. schedule closed form and one Adam step
Outcome schedule_and_adam() {
  Rng rng(5);
  double worst = 0;
  const std::size_t total = 100000;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t s = rng.uniform_int(total + 1);
    const double expected =
        1e-6 + 0.5 * (1e-4 - 1e-6) * (1.0 + std::cos(std::numbers::pi * static_cast<double>(s) / total));
    worst = std::max(worst, std::abs(cosine_lr(s, total, 1e-4, 1e-6) - expected));
  }
  nn::ParamSet<double> p, g;
  p.emplace("w", nn::Tensor<double>({1}, 0.7));
  g.emplace("w", nn::Tensor<double>({1}, -0.3));
  auto st = AdamState<double>::zeros_for(p);
  adam_step(p, st, g, 2e-3);
  const double m = 0.1 * -0.3, v = 0.001 * 0.09;
  const double expected = 0.7 - 2e-3 * (m / 0.1) / (std::sqrt(v / 0.001) + 1e-8);
  const double adam_err = std::abs(p.at("w").data[0] - expected);
  return {worst <= kScheduleTol && adam_err <= kAdamTol,
          "max cosine error " + fmt("%.2e", worst) + ", Adam error " + fmt("%.2e", adam_err)};
}

// 7. synth -> train -> eval with the toy config, twice
Outcome toy_experiment() {
  const auto t0 = Clock::now();
  test::TempDir data("acc_toy"), runs("acc_runs");
  if (cli({"synth", "--out", data.path().string()}) != 0) return {false, "synth failed"};
  double top1[2] = {0, 0};
  for (int r = 0; r < 2; ++r) {
    const auto out = runs / ("run" + std::to_string(r));
    if (cli({"train", "--config", toy_config_path().string(), "--data", data.path().string(), "--out",
             out.string()}) != 0)
      return {false, "train failed"};
    std::string report;
    if (cli({"eval", "--checkpoint", (out / "latest.ckpt").string(), "--data", data.path().string()}, &report) != 0)
      return {false, "eval failed"};
    const auto pos = report.find("top1=");
    if (pos == std::string::npos) return {false, "no top1 in eval report"};
    top1[r] = std::stod(report.substr(pos + 5));
  }
  const bool same = read_file(runs / "run0" / "metrics.csv") == read_file(runs / "run1" / "metrics.csv");
  const auto cfg = read_config(toy_config_path());
  const double secs = seconds_since(t0);
  return {top1[0] >= kToyAccuracy && same && cfg.epochs <= 30 && secs < kToySeconds,
          "top1 " + fmt("%.4f", top1[0]) + " after " + std::to_string(cfg.epochs) + " epochs, metric logs " +
              (same ? "identical" : "differ") + ", " + fmt("%.0f s", secs)};
}

// 8. memorize two clips with augmentation off
Outcome overfit() {
  test::TempDir data("acc_fit"), out("acc_fit_run");
  SyntheticSpec spec;
  Manifest m;
  m.classes = {"c0", "c1"};
  for (int k = 0; k < 2; ++k) {
    const std::string path = "c" + std::to_string(k) + ".lrwr";
    write_clip(synthetic_clip(spec, static_cast<std::size_t>(k), 0), data / path);
    for (Split s : {Split::train, Split::test}) {
      SampleRecord r;
      r.clip_path = path;
      r.class_name = m.classes[static_cast<std::size_t>(k)];
      r.class_id = k;
      r.split = s;
      r.frame_count = spec.frames;
      m.records.push_back(r);
    }
  }
  TrainConfig cfg = read_config(toy_config_path());
  cfg.schedule = Schedule::constant;
  cfg.lr_max = 1e-3;
  cfg.batch_size = 2;
  cfg.epochs = kOverfitSteps;
  cfg.augment = AugmentConfig{};
  cfg.augment.crop_size = spec.size;
  cfg.augment.flip_prob = 0.0;
  cfg.augment.mixup = false;
  cfg.augment.smoothing_eps = 0.0;
  cfg.model.input_size = spec.size;
  cfg.model.dropblock.drop_rate = 0.0;
  TrainOptions opts;
  opts.log = nullptr;
  opts.stop_when = [](const MetricRow& r) { return r.train_loss < kOverfitLoss; };
  const auto res = train<CliReal>(m, data.path(), cfg, out.path(), opts);
  const auto& last = res.state.metrics.back();
  return {last.train_loss < kOverfitLoss && last.step <= kOverfitSteps,
          "loss " + fmt("%.4g", last.train_loss) + " at step " + std::to_string(last.step)};
}

// 9. round trips and interrupt/resume
Outcome persistence() {
  std::vector<std::string> bad;
  test::TempDir dir("acc_persist");
  Rng rng(3);
  Clip clip(5, 9, 13);
  for (auto& v : clip.data()) v = static_cast<std::uint8_t>(rng.uniform_int(256));
  write_clip(clip, dir / "c.lrwr");
  const auto clip_bytes = read_file(dir / "c.lrwr");
  write_clip(read_clip(dir / "c.lrwr"), dir / "c2.lrwr");
  if (read_clip(dir / "c.lrwr") != clip || read_file(dir / "c2.lrwr") != clip_bytes) bad.push_back("clip");

  SyntheticSpec spec;
  spec.frames = 16;
  const auto m = generate_synthetic(spec, dir / "data");
  const auto mtext = read_file(dir / "data" / "manifest.tsv");
  if (parse_manifest(mtext) != m || serialize_manifest(parse_manifest(mtext)) != mtext) bad.push_back("manifest");

  TrainConfig cfg = read_config(toy_config_path());
  cfg.epochs = 6;
  cfg.model.num_classes = m.num_classes();
  TrainOptions opts;
  opts.log = nullptr;
  const auto full = train<CliReal>(m, dir / "data", cfg, dir / "full", opts);
  opts.stop_after_epoch = 3;
  train<CliReal>(m, dir / "data", cfg, dir / "split", opts);
  const auto mid = read_file(dir / "split" / "metrics.csv");
  opts.stop_after_epoch.reset();
  const auto resumed = train<CliReal>(m, dir / "data", cfg, dir / "split", opts);
  if (!resumed.resumed) bad.push_back("resume did not load the checkpoint");
  if (read_file(dir / "split" / "metrics.csv") != read_file(dir / "full" / "metrics.csv"))
    bad.push_back("resumed metric log differs");
  if (resumed.state != full.state) bad.push_back("resumed state differs");

  const auto ck_bytes = read_file(dir / "full" / "latest.ckpt");
  const auto ck = decode_checkpoint<CliReal>(ck_bytes);
  if (encode_checkpoint(ck.state, ck.config) != ck_bytes || ck.state != full.state) bad.push_back("checkpoint");
  const std::size_t mid_rows = static_cast<std::size_t>(std::count(mid.begin(), mid.end(), '\n')) - 1;
  return {bad.empty(), bad.empty() ? "clip, manifest, checkpoint bit-exact; resume after " + std::to_string(mid_rows) +
                                         " of 6 epochs reproduces the log"
                                   : bad.front()};
}

}  // namespace

int main() {
  unsetenv("LRWR_SEED");
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"crop-size rule oracle", crop_rule_oracle},
      {"alignment and IoU", geometry},
      {"dataset protocol", dataset_protocol},
      {"augmentation invariants", augmentation},
      {"model gradient check", gradient_check},
      {"schedule and Adam", schedule_and_adam},
      {"toy end-to-end", toy_experiment},
      {"overfit two clips", overfit},
      {"persistence and resume", persistence},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
