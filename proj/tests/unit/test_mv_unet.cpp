#include <gtest/gtest.h>

#include <cstring>

#include "mvseg/mv_unet.hpp"
#include "test_support.hpp"

using namespace mvseg;
using nn::Mode;
using nn::Tensor;

namespace {

UNetConfig small(bool fuse) {
  UNetConfig c;
  c.base_filters = 4;
  c.image_size = 32;
  c.fuse_enabled = fuse;
  return c;
}

}  // namespace

TEST(UNetCounts, DefaultLayout) {
  UNetConfig mv;
  UNetConfig base = mv;
  base.fuse_enabled = false;
  EXPECT_EQ(count_conv_weights(base), 1349296u);
  EXPECT_EQ(fuse_block_conv_weights(mv), 9u * 32 * 256 + 9u * 256 * 256);
  EXPECT_EQ(count_conv_weights(mv), count_conv_weights(base) + fuse_block_conv_weights(mv));
  UNet<float> model(mv);
  EXPECT_EQ(model.count_conv_weights(), count_conv_weights(mv));
}

TEST(UNet, OutputShapeAndEvalDeterminism) {
  UNet<float> m(small(false));
  m.init(1);
  Rng rng(2);
  const auto x = test::random_tensor<float>({3, 1, 32, 32}, rng);
  const auto y = m.forward(x);
  EXPECT_EQ(y.shape(), (nn::Shape4{3, 2, 32, 32}));
  EXPECT_EQ(m.forward(x), y);
}

TEST(UNet, FuseWithoutPriorsIsAnInputError) {
  UNet<float> m(small(true));
  m.init(0);
  EXPECT_THROW(m.forward(Tensor<float>(1, 1, 32, 32)), InputError);
  EXPECT_THROW(m.forward(Tensor<float>(1, 1, 32, 32), Tensor<float>(1, 31, 2, 2)), ShapeError);
}

TEST(UNet, PlainModelIgnoresPriors) {
  UNet<float> m(small(false));
  m.init(0);
  Rng rng(3);
  const auto x = test::random_tensor<float>({1, 1, 32, 32}, rng);
  EXPECT_EQ(m.forward(x, Tensor<float>(1, 32, 2, 2, 0.7f)), m.forward(x));
}

TEST(UNet, ZeroFuseReducesToPlainModel) {
  UNet<float> mv(small(true)), base(small(false));
  mv.init(11);
  base.init(11);
  mv.zero_fuse();
  Rng rng(5);
  for (int k = 0; k < 5; ++k) {
    const auto x = test::random_tensor<float>({2, 1, 32, 32}, rng);
    const auto p = test::random_tensor<float>({2, 32, 2, 2}, rng, 0, 1);
    const auto a = mv.forward(x, p, Mode::kTrain), b = base.forward(x, Mode::kTrain);
    ASSERT_EQ(a.shape(), b.shape());
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0);
  }
}

TEST(UNet, PriorsChangeOutputWhenFuseActive) {
  UNet<float> m(small(true));
  m.init(2);
  Rng rng(6);
  const auto x = test::random_tensor<float>({1, 1, 32, 32}, rng);
  EXPECT_NE(m.forward(x, Tensor<float>(1, 32, 2, 2, 0.1f)), m.forward(x, Tensor<float>(1, 32, 2, 2, 0.9f)));
}

TEST(FuseBlock, ZeroWeightsPassBottleneckThrough) {
  FuseBlock<double> f(32, 16, {});
  Rng rng(1);
  f.init(rng);
  nn::ParamList<double> p;
  f.collect("fuse", p);
  for (auto& e : p.params) e.param->value.fill(0.0);
  const auto b = test::random_tensor<double>({2, 16, 4, 4}, rng);
  EXPECT_EQ(f.forward(test::random_tensor<double>({2, 32, 4, 4}, rng), b, Mode::kTrain), b);
}

TEST(UNet, GradientMatchesFiniteDifferences) {
  UNet<double> m(small(true));
  m.init(4);
  Rng rng(7);
  const auto x = test::random_tensor<double>({4, 1, 32, 32}, rng);
  const auto p = test::random_tensor<double>({4, 32, 2, 2}, rng, 0, 1);
  std::vector<std::uint8_t> labels(4 * 32 * 32);
  for (auto& v : labels) v = rng.uniform() < 0.3;
  const std::vector<double> w(4, 0.25);
  auto params = m.params();
  const auto r = nn::grad_check<double>(
      [&] { return nn::cross_entropy(m.forward(x, p, Mode::kTrain), labels); },
      [&] { m.backward(nn::cross_entropy_grad(m.forward(x, p, Mode::kTrain), labels, w)); }, params, 20,
      1e-6, 2, 1e-8);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(UNet, PriorGradientMatchesFiniteDifferences) {
  UNet<double> m(small(true));
  m.init(8);
  Rng rng(9);
  const auto x = test::random_tensor<double>({3, 1, 32, 32}, rng);
  auto p = test::random_tensor<double>({3, 32, 2, 2}, rng, 0, 1);
  std::vector<std::uint8_t> labels(3 * 32 * 32);
  for (auto& v : labels) v = rng.uniform() < 0.3;
  const std::vector<double> w(3, 1.0 / 3);
  const auto dp = m.backward(nn::cross_entropy_grad(m.forward(x, p, Mode::kTrain), labels, w));
  ASSERT_EQ(dp.shape(), p.shape());
  for (std::size_t k : {0ul, 17ul, 200ul, 383ul}) {
    const double v = p[k];
    p[k] = v + 1e-6;
    const double up = nn::cross_entropy(m.forward(x, p, Mode::kTrain), labels);
    p[k] = v - 1e-6;
    const double down = nn::cross_entropy(m.forward(x, p, Mode::kTrain), labels);
    p[k] = v;
    const double num = (up - down) / 2e-6;
    EXPECT_NEAR(dp[k], num, 1e-3 * std::max(std::abs(num), 1e-5)) << k;
  }
}

TEST(MakePriorTensor, LayoutAndMissingView) {
  UNetConfig cfg;
  PriorCodes a;
  for (int v = 0; v < 4; ++v) {
    a[v].resize(512);
    for (int k = 0; k < 512; ++k) a[v][k] = static_cast<float>(v * 1000 + k);
  }
  const auto t = make_prior_tensor<float>({&a, &a}, cfg);
  EXPECT_EQ(t.shape(), (nn::Shape4{2, 32, 8, 8}));
  EXPECT_EQ(t.at(1, 8, 0, 0), 1000.0f);
  EXPECT_EQ(t.at(0, 31, 7, 7), 3511.0f);
  PriorCodes b = a;
  b[2].clear();
  try {
    make_prior_tensor<float>({&b}, cfg);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("LA3"), std::string::npos) << e.what();
  }
}
