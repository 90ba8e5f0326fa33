#include <gtest/gtest.h>

#include <functional>

#include "lrwr/nn/gru.hpp"
#include "lrwr/nn/ops.hpp"
#include "lrwr/rng.hpp"

using namespace lrwr;
using namespace lrwr::nn;

namespace {

Act<double> random_act(std::size_t c, std::size_t t, std::size_t h, std::size_t w, Rng& rng) {
  Act<double> a(c, t, h, w);
  for (auto& v : a.v) v = rng.uniform(-1, 1);
  return a;
}

Tensor<double> random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Direct-loop grouped 3D convolution.
Act<double> naive_conv(const Act<double>& x, const Tensor<double>& w, const ConvSpec& s) {
  Act<double> y(s.cout, s.out_t(x.t), s.out_h(x.h), s.out_w(x.w));
  for (std::size_t co = 0; co < s.cout; ++co) {
    const std::size_t g = co / s.cout_g();
    for (std::size_t ot = 0; ot < y.t; ++ot)
      for (std::size_t oh = 0; oh < y.h; ++oh)
        for (std::size_t ow = 0; ow < y.w; ++ow) {
          double acc = 0;
          for (std::size_t ci = 0; ci < s.cin_g(); ++ci)
            for (std::size_t a = 0; a < s.kt; ++a)
              for (std::size_t b = 0; b < s.kh; ++b)
                for (std::size_t c = 0; c < s.kw; ++c) {
                  const long t = long(ot * s.st + a) - long(s.pt);
                  const long yy = long(oh * s.sh + b) - long(s.ph);
                  const long xx = long(ow * s.sw + c) - long(s.pw);
                  if (t < 0 || yy < 0 || xx < 0 || t >= long(x.t) || yy >= long(x.h) || xx >= long(x.w)) continue;
                  const double wv = w.data[(((co * s.cin_g() + ci) * s.kt + a) * s.kh + b) * s.kw + c];
                  acc += wv * x.plane(g * s.cin_g() + ci, std::size_t(t))[std::size_t(yy) * x.w + std::size_t(xx)];
                }
          y.plane(co, ot)[oh * y.w + ow] = acc;
        }
  }
  return y;
}

double dot(const Act<double>& a, const Act<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i) s += a.v[i] * b.v[i];
  return s;
}

// Central difference of f with respect to every entry of xs.
std::vector<double> numeric(std::vector<double>& xs, const std::function<double()>& f, double h = 1e-6) {
  std::vector<double> g(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double o = xs[i];
    xs[i] = o + h;
    const double up = f();
    xs[i] = o - h;
    const double dn = f();
    xs[i] = o;
    g[i] = (up - dn) / (2 * h);
  }
  return g;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

std::vector<ConvSpec> conv_cases() {
  std::vector<ConvSpec> out;
  out.push_back(conv2d_spec(3, 4, 3, 1));
  out.push_back(conv2d_spec(4, 6, 3, 2, 2));
  out.push_back(conv2d_spec(4, 4, 1, 1, 2));
  ConvSpec s3;
  s3.cin = 1, s3.cout = 2, s3.kt = 3, s3.kh = s3.kw = 5, s3.sh = s3.sw = 2, s3.pt = 1, s3.ph = s3.pw = 2;
  out.push_back(s3);
  return out;
}

}  // namespace

TEST(Conv, MatchesDirectLoops) {
  Rng rng(1);
  for (const auto& s : conv_cases()) {
    const auto x = random_act(s.cin, 3, 7, 6, rng);
    const auto w = random_tensor(s.weight_shape(), rng);
    const auto fast = conv_forward(x, w, s);
    const auto ref = naive_conv(x, w, s);
    ASSERT_TRUE(fast.same_shape(ref));
    for (std::size_t i = 0; i < ref.v.size(); ++i) EXPECT_NEAR(fast.v[i], ref.v[i], 1e-12);
  }
}

TEST(Conv, BackwardMatchesFiniteDifferences) {
  Rng rng(2);
  for (const auto& s : conv_cases()) {
    auto x = random_act(s.cin, 3, 5, 5, rng);
    auto w = random_tensor(s.weight_shape(), rng);
    const auto y0 = conv_forward(x, w, s);
    const auto dy = random_act(y0.c, y0.t, y0.h, y0.w, rng);
    Tensor<double> dw(w.shape);
    Act<double> dx;
    conv_backward(x, w, s, dy, dw, &dx);
    const auto f = [&] { return dot(conv_forward(x, w, s), dy); };
    expect_close(dw.data, numeric(w.data, f), 1e-7);
    expect_close(dx.v, numeric(x.v, f), 1e-7);
  }
}

TEST(Conv, BackwardAccumulatesWeightGradient) {
  Rng rng(3);
  const auto s = conv2d_spec(2, 2, 3, 1);
  const auto x = random_act(2, 1, 4, 4, rng);
  const auto w = random_tensor(s.weight_shape(), rng);
  const auto dy = random_act(2, 1, 4, 4, rng);
  Tensor<double> once(w.shape), twice(w.shape);
  conv_backward<double>(x, w, s, dy, once, nullptr);
  conv_backward<double>(x, w, s, dy, twice, nullptr);
  conv_backward<double>(x, w, s, dy, twice, nullptr);
  for (std::size_t i = 0; i < once.data.size(); ++i) EXPECT_NEAR(twice.data[i], 2 * once.data[i], 1e-12);
}

TEST(Norm, OutputHasZeroMeanUnitVariancePerChannel) {
  Rng rng(4);
  auto x = random_act(3, 4, 5, 5, rng);
  for (auto& v : x.v) v = 3 * v + 7;
  Tensor<double> gamma({3}, 1.0), beta({3}, 0.0);
  const auto y = norm_forward(x, gamma, beta, static_cast<NormCache<double>*>(nullptr));
  const std::size_t n = y.spatial();
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < n; ++i) m += y.chan(c)[i];
    m /= double(n);
    for (std::size_t i = 0; i < n; ++i) v += (y.chan(c)[i] - m) * (y.chan(c)[i] - m);
    EXPECT_NEAR(m, 0, 1e-12);
    EXPECT_NEAR(v / double(n), 1, 1e-3);
  }
}

TEST(Norm, BackwardMatchesFiniteDifferences) {
  Rng rng(5);
  auto x = random_act(3, 2, 3, 4, rng);
  auto gamma = random_tensor({3}, rng, 0.5, 1.5);
  auto beta = random_tensor({3}, rng);
  const auto dy = random_act(3, 2, 3, 4, rng);
  NormCache<double> cache;
  norm_forward(x, gamma, beta, &cache);
  Tensor<double> dg({3}), db({3});
  const auto dx = norm_backward(dy, cache, gamma, dg, db);
  const auto f = [&] { return dot(norm_forward(x, gamma, beta, static_cast<NormCache<double>*>(nullptr)), dy); };
  expect_close(dx.v, numeric(x.v, f), 1e-6);
  expect_close(dg.data, numeric(gamma.data, f), 1e-6);
  expect_close(db.data, numeric(beta.data, f), 1e-6);
}

TEST(SpatialMean, ForwardAndBackward) {
  Rng rng(6);
  const auto x = random_act(2, 3, 2, 2, rng);
  const auto m = spatial_mean(x);
  EXPECT_NEAR(m(1, 2), (x.plane(1, 2)[0] + x.plane(1, 2)[1] + x.plane(1, 2)[2] + x.plane(1, 2)[3]) / 4, 1e-15);
  MatR<double> dm = MatR<double>::Ones(2, 3);
  Act<double> dx(2, 3, 2, 2);
  spatial_mean_backward(dm, dx);
  for (double v : dx.v) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(LogSoftmax, ColumnsNormalizeAndStable) {
  MatR<double> logits(3, 2);
  logits << 1, 1000, 2, 1001, 3, 999;
  const auto lp = log_softmax_columns(logits);
  for (Eigen::Index t = 0; t < 2; ++t) EXPECT_NEAR(lp.col(t).array().exp().sum(), 1.0, 1e-12);
  EXPECT_TRUE(lp.allFinite());
  EXPECT_NEAR(lp(2, 0) - lp(0, 0), 2.0, 1e-12);
}

TEST(LogSoftmax, BackwardMatchesFiniteDifferences) {
  Rng rng(7);
  MatR<double> logits(4, 3), dout(4, 3);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = rng.uniform(-2, 2), dout.data()[i] = rng.uniform(-1, 1);
  const auto d = log_softmax_columns_backward(dout, log_softmax_columns(logits));
  std::vector<double> flat(logits.data(), logits.data() + logits.size());
  const auto f = [&] {
    MatR<double> l = Eigen::Map<MatR<double>>(flat.data(), 4, 3);
    return (log_softmax_columns(l).array() * dout.array()).sum();
  };
  expect_close(std::vector<double>(d.data(), d.data() + d.size()), numeric(flat, f), 1e-7);
}

TEST(Relu, ForwardAndMask) {
  Act<double> x(1, 1, 1, 4);
  x.v = {-1, 0, 2, -3};
  relu_inplace(x);
  EXPECT_EQ(x.v, (std::vector<double>{0, 0, 2, 0}));
  Act<double> dy(1, 1, 1, 4);
  dy.v = {1, 1, 1, 1};
  relu_backward_inplace(dy, x);
  EXPECT_EQ(dy.v, (std::vector<double>{0, 0, 1, 0}));
}

TEST(Gru, ParameterCountFormula) {
  EXPECT_EQ(gru_parameter_count(512, 512), 3u * 512 * 1024 + 6 * 512);
  EXPECT_EQ(gru_parameter_count(4, 2), 3u * 2 * 6 + 12);
}

TEST(Gru, BackwardMatchesFiniteDifferences) {
  Rng rng(8);
  const std::size_t D = 3, H = 4, steps = 5;
  auto wih = random_tensor({3 * H, D}, rng, -0.5, 0.5), whh = random_tensor({3 * H, H}, rng, -0.5, 0.5);
  auto bih = random_tensor({3 * H}, rng, -0.5, 0.5), bhh = random_tensor({3 * H}, rng, -0.5, 0.5);
  std::vector<double> xs(D * steps);
  for (auto& v : xs) v = rng.uniform(-1, 1);
  MatR<double> dout(H, steps);
  for (Eigen::Index i = 0; i < dout.size(); ++i) dout.data()[i] = rng.uniform(-1, 1);
  const GruParams<double> p{&wih, &whh, &bih, &bhh};
  for (bool reverse : {false, true}) {
    const auto f = [&] {
      const MatR<double> x = Eigen::Map<MatR<double>>(xs.data(), D, steps);
      return (gru_forward(x, p, H, reverse, static_cast<GruCache<double>*>(nullptr)).array() * dout.array()).sum();
    };
    GruCache<double> cache;
    const MatR<double> x = Eigen::Map<MatR<double>>(xs.data(), D, steps);
    gru_forward(x, p, H, reverse, &cache);
    Tensor<double> gwih(wih.shape), gwhh(whh.shape), gbih(bih.shape), gbhh(bhh.shape);
    const auto dx = gru_backward(dout, cache, p, GruGrads<double>{&gwih, &gwhh, &gbih, &gbhh}, H);
    expect_close(std::vector<double>(dx.data(), dx.data() + dx.size()), numeric(xs, f), 1e-7);
    expect_close(gwih.data, numeric(wih.data, f), 1e-7);
    expect_close(gwhh.data, numeric(whh.data, f), 1e-7);
    expect_close(gbih.data, numeric(bih.data, f), 1e-7);
    expect_close(gbhh.data, numeric(bhh.data, f), 1e-7);
  }
}

TEST(Gru, ReverseDirectionSeesFutureFirst) {
  Rng rng(9);
  const std::size_t D = 2, H = 3;
  auto wih = random_tensor({3 * H, D}, rng), whh = random_tensor({3 * H, H}, rng);
  Tensor<double> bih({3 * H}), bhh({3 * H});
  const GruParams<double> p{&wih, &whh, &bih, &bhh};
  MatR<double> x = MatR<double>::Zero(D, 4);
  const auto base_fwd = gru_forward(x, p, H, false, static_cast<GruCache<double>*>(nullptr));
  const auto base_rev = gru_forward(x, p, H, true, static_cast<GruCache<double>*>(nullptr));
  x(0, 3) = 1.0;  // change only the last step
  const auto fwd = gru_forward(x, p, H, false, static_cast<GruCache<double>*>(nullptr));
  const auto rev = gru_forward(x, p, H, true, static_cast<GruCache<double>*>(nullptr));
  EXPECT_EQ(fwd.col(0), base_fwd.col(0));
  EXPECT_NE(rev.col(0), base_rev.col(0));
}

TEST(ParamSetHelpers, CountAccumulateCast) {
  ParamSet<double> p;
  p.emplace("a", Tensor<double>({2, 3}, 1.0));
  p.emplace("b", Tensor<double>({4}, 2.0));
  EXPECT_EQ(parameter_count(p), 10u);
  auto z = zeros_like(p);
  accumulate(z, p);
  accumulate(z, p);
  EXPECT_DOUBLE_EQ(z.at("b").data[3], 4.0);
  const auto f = cast_params<float>(z);
  EXPECT_FLOAT_EQ(f.at("a").data[0], 2.0f);
}
