#include <gtest/gtest.h>

#include <set>

#include "lrwr/augment.hpp"

using namespace lrwr;

namespace {

// Every frame carries a single marker pixel at a frame-dependent position.
Clip marker_clip(std::size_t t, std::size_t s, std::vector<std::pair<std::size_t, std::size_t>>& where) {
  Clip c(t, s, s, 10);
  where.clear();
  for (std::size_t f = 0; f < t; ++f) {
    const std::size_t y = 30 + (f * 7) % 40, x = 35 + (f * 11) % 40;
    c.at(f, y, x) = 255;
    where.emplace_back(y, x);
  }
  return c;
}

std::pair<std::size_t, std::size_t> find_marker(const Clip& c, std::size_t t) {
  for (std::size_t y = 0; y < c.height(); ++y)
    for (std::size_t x = 0; x < c.width(); ++x)
      if (c.at(t, y, x) == 255) return {y, x};
  return {SIZE_MAX, SIZE_MAX};
}

}  // namespace

TEST(RandomCrop, SingleOffsetSharedAcrossFrames) {
  std::vector<std::pair<std::size_t, std::size_t>> where;
  const Clip clip = marker_clip(10, 112, where);
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Clip out = random_crop_consistent(clip, 88, rng);
    ASSERT_EQ(out.height(), 88u);
    const auto [y0, x0] = find_marker(out, 0);
    const std::size_t dy = where[0].first - y0, dx = where[0].second - x0;
    EXPECT_LE(dy, 24u);
    EXPECT_LE(dx, 24u);
    for (std::size_t t = 1; t < 10; ++t) {
      const auto [y, x] = find_marker(out, t);
      EXPECT_EQ(where[t].first - y, dy);
      EXPECT_EQ(where[t].second - x, dx);
    }
  }
}

TEST(RandomCrop, OffsetsCoverFullRange) {
  Clip clip(1, 112, 112);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t y = 0; y < 112; ++y)
    for (std::size_t x = 0; x < 112; ++x) clip.at(0, y, x) = static_cast<std::uint8_t>(y < 100 ? y : 0);
  Rng rng(5);
  std::set<std::size_t> dys;
  for (int i = 0; i < 2000; ++i) dys.insert(random_crop_consistent(clip, 88, rng).at(0, 0, 0));
  EXPECT_EQ(dys.size(), 25u);
  EXPECT_EQ(*dys.begin(), 0u);
  EXPECT_EQ(*dys.rbegin(), 24u);
}

TEST(RandomCrop, EqualSizeIsIdentityAndTooLargeRejected) {
  Clip clip(2, 88, 88, 3);
  Rng rng(1);
  EXPECT_EQ(random_crop_consistent(clip, 88, rng), clip);
  EXPECT_THROW(random_crop_consistent(clip, 89, rng), ShapeError);
}

TEST(CenterCrop, UsesCentralWindow) {
  Clip clip(1, 6, 6);
  clip.at(0, 1, 1) = 9;
  const Clip out = center_crop(clip, 4);
  EXPECT_EQ(out.at(0, 0, 0), 9);
}

TEST(HorizontalFlip, AllOrNothingPerClip) {
  std::vector<std::pair<std::size_t, std::size_t>> where;
  const Clip clip = marker_clip(8, 112, where);
  Rng rng(6);
  int flipped = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Clip out = horizontal_flip(clip, 0.5, rng);
    std::size_t mirrored = 0;
    for (std::size_t t = 0; t < 8; ++t) {
      const auto [y, x] = find_marker(out, t);
      EXPECT_EQ(y, where[t].first);
      if (x == 111 - where[t].second) ++mirrored;
      else EXPECT_EQ(x, where[t].second);
    }
    EXPECT_TRUE(mirrored == 0 || mirrored == 8);
    flipped += mirrored == 8;
  }
  EXPECT_GT(flipped, 60);
  EXPECT_LT(flipped, 140);
}

TEST(HorizontalFlip, ProbabilityExtremes) {
  Clip clip(1, 2, 2);
  clip.at(0, 0, 0) = 1;
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ(horizontal_flip(clip, 0.0, rng), clip);
    EXPECT_EQ(horizontal_flip(clip, 1.0, rng), mirror(clip));
  }
}

TEST(HorizontalFlip, FrequencyNearHalf) {
  Rng rng(2024);
  Clip clip(1, 1, 2);
  clip.at(0, 0, 0) = 1;
  int flips = 0;
  for (int i = 0; i < 10000; ++i) flips += horizontal_flip(clip, 0.5, rng).at(0, 0, 1) == 1;
  EXPECT_GE(flips, 4800);
  EXPECT_LE(flips, 5200);
}

TEST(Cutout, OneSquareSamePlaceEveryFrame) {
  Clip clip(5, 112, 112, 255);
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const Clip out = cutout(clip, 1, 32, rng);
    std::size_t y0 = SIZE_MAX, y1 = 0, x0 = SIZE_MAX, x1 = 0, zeros = 0;
    for (std::size_t y = 0; y < 112; ++y)
      for (std::size_t x = 0; x < 112; ++x)
        if (out.at(0, y, x) == 0) {
          ++zeros;
          y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
        }
    ASSERT_GT(zeros, 0u);
    EXPECT_EQ(zeros, (y1 - y0 + 1) * (x1 - x0 + 1));  // one solid rectangle
    EXPECT_LE(y1 - y0 + 1, 32u);
    EXPECT_LE(x1 - x0 + 1, 32u);
    if (y0 > 0 && y1 < 111) {
      EXPECT_EQ(y1 - y0 + 1, 32u);
    }
    for (std::size_t t = 1; t < 5; ++t)
      EXPECT_TRUE(std::equal(out.frame(t).begin(), out.frame(t).end(), out.frame(0).begin()));
  }
}

TEST(Cutout, ZeroHolesIsIdentity) {
  Clip clip(2, 10, 10, 5);
  Rng rng(1);
  EXPECT_EQ(cutout(clip, 0, 4, rng), clip);
  EXPECT_THROW(cutout(clip, 1, 11, rng), ShapeError);
}

TEST(LabelSmoothing, ExampleAndSum) {
  const auto d = label_smooth(0, 2, 0.1);
  EXPECT_DOUBLE_EQ(d.probs[0], 0.95);
  EXPECT_DOUBLE_EQ(d.probs[1], 0.05);
  for (std::size_t k : {2, 5, 500}) EXPECT_NEAR(label_smooth(1, k, 0.1).sum(), 1.0, 1e-6);
  EXPECT_EQ(label_smooth(3, 5, 0.0).probs, one_hot(3, 5).probs);
  EXPECT_THROW(label_smooth(0, 2, 1.0), DomainError);
  EXPECT_THROW(label_smooth(0, 2, -0.1), DomainError);
}

TEST(MixUp, FixedLambdaExample) {
  std::vector<std::vector<float>> a{{1.0f, 0.0f}}, b{{0.0f, 1.0f}};
  std::vector<int> la{0}, lb{2};
  const auto m = mixup_with_lambda<float>(a, la, b, lb, 3, 0.25);
  EXPECT_FLOAT_EQ(m.inputs[0][0], 0.25f);
  EXPECT_FLOAT_EQ(m.inputs[0][1], 0.75f);
  EXPECT_DOUBLE_EQ(m.targets[0].probs[0], 0.25);
  EXPECT_DOUBLE_EQ(m.targets[0].probs[1], 0.0);
  EXPECT_DOUBLE_EQ(m.targets[0].probs[2], 0.75);
}

TEST(MixUp, TargetsAreDistributions) {
  Rng rng(9);
  std::vector<std::vector<double>> a(6, std::vector<double>(4, 0.5)), b(6, std::vector<double>(4, -0.5));
  std::vector<int> la{0, 1, 2, 3, 4, 0}, lb{1, 1, 0, 4, 2, 3};
  for (bool per_sample : {false, true}) {
    const auto m = mixup<double>(a, la, b, lb, 5, 0.4, rng, per_sample);
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_TRUE(m.targets[i].is_valid(1e-6));
      EXPECT_TRUE(label_smooth(m.targets[i], 0.1).is_valid(1e-6));
      EXPECT_GE(m.lambdas[i], 0.0);
      EXPECT_LE(m.lambdas[i], 1.0);
    }
    if (!per_sample) {
      for (std::size_t i = 1; i < 6; ++i) EXPECT_EQ(m.lambdas[i], m.lambdas[0]);
    }
  }
  EXPECT_THROW(mixup<double>(a, la, b, lb, 5, 0.0, rng), DomainError);
}

TEST(MixUp, ShapeMismatchRejected) {
  std::vector<std::vector<float>> a{{1.0f}}, b{{1.0f, 2.0f}};
  std::vector<int> l{0};
  EXPECT_THROW(mixup_with_lambda<float>(a, l, b, l, 2, 0.5), ShapeError);
}

TEST(DropBlock, ZeroCellsBelongToFullBlocks) {
  Rng rng(10);
  const std::size_t h = 11, w = 9, bs = 3;
  for (int trial = 0; trial < 50; ++trial) {
    const auto mask = dropblock_mask(h, w, bs, 0.2, rng);
    std::vector<bool> covered(h * w, false);
    for (std::size_t y = 0; y + bs <= h; ++y)
      for (std::size_t x = 0; x + bs <= w; ++x) {
        bool all_zero = true;
        for (std::size_t by = 0; by < bs; ++by)
          for (std::size_t bx = 0; bx < bs; ++bx) all_zero = all_zero && mask[(y + by) * w + x + bx] == 0;
        if (all_zero)
          for (std::size_t by = 0; by < bs; ++by)
            for (std::size_t bx = 0; bx < bs; ++bx) covered[(y + by) * w + x + bx] = true;
      }
    for (std::size_t i = 0; i < h * w; ++i)
      if (mask[i] == 0) {
        EXPECT_TRUE(covered[i]) << i;
      }
  }
}

TEST(DropBlock, RateZeroKeepsAllAndRateRoughlyMatches) {
  Rng rng(11);
  const auto keep = dropblock_mask(8, 8, 2, 0.0, rng);
  EXPECT_EQ(std::count(keep.begin(), keep.end(), 1), 64);
  double dropped = 0;
  for (int i = 0; i < 500; ++i) {
    const auto m = dropblock_mask(32, 32, 3, 0.1, rng);
    dropped += static_cast<double>(std::count(m.begin(), m.end(), 0)) / 1024.0;
  }
  dropped /= 500;
  EXPECT_GT(dropped, 0.05);
  EXPECT_LT(dropped, 0.12);
  EXPECT_THROW(dropblock_mask(4, 4, 5, 0.1, rng), ShapeError);
}

TEST(Normalize, MapsToUnitRange) {
  Clip clip(1, 1, 3);
  clip.at(0, 0, 0) = 0;
  clip.at(0, 0, 1) = 255;
  clip.at(0, 0, 2) = 128;
  const auto v = normalize_clip<double>(clip);
  EXPECT_DOUBLE_EQ(v[0], -1.0);
  EXPECT_DOUBLE_EQ(v[1], 1.0);
  EXPECT_NEAR(v[2], 0.5 / 127.5, 1e-15);
}

TEST(AugmentPipeline, DeterministicGivenRng) {
  Clip clip(4, 32, 32);
  for (std::size_t i = 0; i < clip.data().size(); ++i) clip.data()[i] = static_cast<std::uint8_t>(i * 31);
  AugmentConfig cfg;
  cfg.crop_size = 28;
  cfg.cutout = CutoutSpec{1, 8};
  Rng a(3), b(3);
  EXPECT_EQ(augment_clip(clip, cfg, a), augment_clip(clip, cfg, b));
}
