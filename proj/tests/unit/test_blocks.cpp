#include <gtest/gtest.h>

#include <cmath>

#include "mvseg/blocks.hpp"
#include "mvseg/optim.hpp"
#include "test_support.hpp"

using namespace mvseg;
using namespace mvseg::nn;
using test::random_tensor;

namespace {

// Direct convolution, zero padding.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                          int stride, int pad) {
  const int k = w.h();
  const int ho = (x.h() + 2 * pad - k) / stride + 1, wo = (x.w() + 2 * pad - k) / stride + 1;
  Tensor<double> y(x.n(), w.n(), ho, wo);
  for (int n = 0; n < x.n(); ++n) {
    for (int o = 0; o < w.n(); ++o) {
      for (int r = 0; r < ho; ++r) {
        for (int c = 0; c < wo; ++c) {
          double s = b[o];
          for (int i = 0; i < x.c(); ++i) {
            for (int u = 0; u < k; ++u) {
              for (int v = 0; v < k; ++v) {
                const int yy = r * stride - pad + u, xx = c * stride - pad + v;
                if (yy >= 0 && yy < x.h() && xx >= 0 && xx < x.w()) s += w.at(o, i, u, v) * x.at(n, i, yy, xx);
              }
            }
          }
          y.at(n, o, r, c) = s;
        }
      }
    }
  }
  return y;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

struct ConvCase {
  int cin, cout, k, stride, pad, size;
};

class ConvAgainstNaive : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvAgainstNaive, ForwardMatches) {
  const auto p = GetParam();
  Rng rng(p.cin * 100 + p.k);
  Conv2d<double> conv(p.cin, p.cout, p.k, p.stride, p.pad);
  conv.init(rng);
  const auto x = random_tensor<double>({2, p.cin, p.size, p.size}, rng);
  EXPECT_LT(max_abs_diff(conv.forward(x), naive_conv(x, conv.weight.value, conv.bias.value, p.stride, p.pad)),
            1e-12);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvAgainstNaive,
                         ::testing::Values(ConvCase{1, 4, 3, 1, 1, 9}, ConvCase{3, 5, 3, 2, 1, 10},
                                           ConvCase{4, 2, 1, 1, 0, 6}, ConvCase{2, 3, 3, 2, 1, 7}));

TEST(ConvTranspose, EachInputPixelPaintsItsKernel) {
  ConvTranspose2x2<double> up(1, 1);
  up.weight.value = Tensor<double>(1, 1, 2, 2);
  for (int k = 0; k < 4; ++k) up.weight.value[k] = k + 1;
  up.bias.value[0] = 0.5;
  Tensor<double> x(1, 1, 2, 2);
  x.at(0, 0, 1, 0) = 2.0;
  const auto y = up.forward(x);
  ASSERT_EQ(y.shape(), (Shape4{1, 1, 4, 4}));
  EXPECT_DOUBLE_EQ(y.at(0, 0, 2, 0), 2.5);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 2, 1), 4.5);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 3, 0), 6.5);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 3, 1), 8.5);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 0), 0.5);
}

TEST(ConvWeights, SingleConvCount) {
  Conv2d<float> conv(16, 32, 3, 1, 1);
  ParamList<float> p;
  conv.collect("c", p);
  EXPECT_EQ(p.conv_weight_count(), 4608u);
  EXPECT_EQ(p.parameter_count(), 4608u + 32u);
}

TEST(ResBlock, ZeroConvsGiveIdentity) {
  ResBlock<float> block(4, NormKind::kInstance, ActKind::kLeakyRelu, {});
  Rng rng(1);
  block.init(rng);
  ParamList<float> p;
  block.collect("r", p);
  for (auto& e : p.params) {
    if (e.name.find("conv") != std::string::npos) e.param->value.fill(0.0f);
  }
  const auto x = random_tensor<float>({2, 4, 6, 6}, rng);
  EXPECT_EQ(block.forward(x, Mode::kTrain), x);
}

TEST(Normalization, InstanceNormZeroMeanUnitVariance) {
  Normalization<double> norm(NormKind::kInstance, 3, {});
  norm.init();
  Rng rng(2);
  const auto y = norm.forward(random_tensor<double>({2, 3, 5, 5}, rng, -3.0, 7.0), Mode::kTrain);
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 3; ++c) {
      double s = 0.0, ss = 0.0;
      for (int k = 0; k < 25; ++k) s += y.sample(n)[c * 25 + k];
      for (int k = 0; k < 25; ++k) ss += std::pow(y.sample(n)[c * 25 + k] - s / 25, 2);
      EXPECT_NEAR(s / 25, 0.0, 1e-12);
      EXPECT_NEAR(ss / 25, 1.0, 1e-3);
    }
  }
}

TEST(Normalization, BatchNormEvalUsesRunningStats) {
  Normalization<double> norm(NormKind::kBatch, 1, {});
  norm.init();
  Tensor<double> x(4, 1, 2, 2, 3.0);
  x[0] = 5.0;
  norm.forward(x, Mode::kTrain);
  EXPECT_GT(norm.running_mean[0], 0.0);
  Tensor<double> z(1, 1, 1, 1, 0.0);
  const double expected = -norm.running_mean[0] / std::sqrt(norm.running_var[0] + 1e-5);
  EXPECT_NEAR(norm.forward(z, Mode::kEval)[0], expected, 1e-12);
}

TEST(MaxPool, PicksMaximumAndRoutesGradient) {
  MaxPool2<double> pool;
  Tensor<double> x(1, 1, 2, 4);
  const double v[] = {1, 5, 2, 2, 3, 4, 8, 0};
  for (int k = 0; k < 8; ++k) x[k] = v[k];
  const auto y = pool.forward(x);
  EXPECT_DOUBLE_EQ(y[0], 5.0);
  EXPECT_DOUBLE_EQ(y[1], 8.0);
  const auto dx = pool.backward(Tensor<double>(1, 1, 1, 2, 1.0));
  EXPECT_DOUBLE_EQ(dx[1], 1.0);
  EXPECT_DOUBLE_EQ(dx[6], 1.0);
  EXPECT_DOUBLE_EQ(dx[0] + dx[2] + dx[3] + dx[4] + dx[5] + dx[7], 0.0);
}

TEST(CrossEntropy, UniformLogitsGiveLn2) {
  Tensor<double> logits(2, 2, 3, 3, 0.7);
  std::vector<std::uint8_t> labels(18, 0);
  labels[4] = 1;
  EXPECT_NEAR(cross_entropy(logits, labels), std::log(2.0), 1e-12);
}

TEST(CrossEntropy, SaturatedCorrectLogits) {
  Tensor<double> logits(1, 2, 2, 2);
  const std::vector<std::uint8_t> labels{0, 1, 1, 0};
  for (int k = 0; k < 4; ++k) {
    logits.at(0, labels[k], k / 2, k % 2) = 30.0;
    logits.at(0, 1 - labels[k], k / 2, k % 2) = -30.0;
  }
  EXPECT_LT(cross_entropy(logits, labels), 1e-9);
  EXPECT_EQ(argmax_labels(logits), labels);
}

TEST(CrossEntropy, LabelOutOfRangeThrows) {
  Tensor<double> logits(1, 2, 1, 2);
  const std::vector<std::uint8_t> labels{0, 2};
  EXPECT_THROW(cross_entropy(logits, labels), Error);
}

TEST(Softmax, ColumnsSumToOne) {
  Rng rng(5);
  const auto p = softmax(random_tensor<double>({2, 3, 4, 4}, rng, -5, 5));
  for (int n = 0; n < 2; ++n) {
    for (int k = 0; k < 16; ++k) {
      EXPECT_NEAR(p.sample(n)[k] + p.sample(n)[16 + k] + p.sample(n)[32 + k], 1.0, 1e-12);
    }
  }
}

TEST(GradCheck, ExactForQuadratic) {
  Parameter<double> w;
  w.resize({1, 1, 1, 6});
  Rng rng(3);
  for (auto& v : w.value.values()) v = rng.uniform(-2, 2);
  ParamList<double> params;
  params.add("w", w);
  auto loss = [&] {
    double s = 0.0;
    for (std::size_t k = 0; k < 6; ++k) s += (k + 1.0) * w.value[k] * w.value[k] + w.value[k];
    return s;
  };
  auto grads = [&] {
    for (std::size_t k = 0; k < 6; ++k) w.grad[k] = 2.0 * (k + 1.0) * w.value[k] + 1.0;
  };
  EXPECT_LT(grad_check<double>(loss, grads, params, 6, 1e-4, 1).max_rel_error, 1e-10);
}

TEST(GradCheck, CorruptedGradientIsDetected) {
  Parameter<double> w;
  w.resize({1, 1, 1, 3});
  w.value.fill(0.3);
  ParamList<double> params;
  params.add("w", w);
  auto loss = [&] { return w.value[0] * w.value[0] + w.value[1] + 2.0 * w.value[2]; };
  auto grads = [&] {
    w.grad[0] = 2.0 * w.value[0] + 0.1;
    w.grad[1] = 1.0 + 0.1;
    w.grad[2] = 2.0 + 0.1;
  };
  EXPECT_GT(grad_check<double>(loss, grads, params, 3, 1e-5, 1).max_rel_error, 1e-2);
}

TEST(GradCheck, ResBlockWithCrossEntropy) {
  Rng rng(9);
  Conv2d<double> stem(1, 4, 3, 1, 1);
  ResBlock<double> block(4, NormKind::kInstance, ActKind::kLeakyRelu, {});
  Conv2d<double> head(4, 2, 1, 1, 0);
  stem.init(rng);
  block.init(rng);
  head.init(rng);
  ParamList<double> params;
  stem.collect("stem", params);
  block.collect("res", params);
  head.collect("head", params);
  const auto x = random_tensor<double>({2, 1, 6, 6}, rng);
  std::vector<std::uint8_t> labels(72);
  for (auto& l : labels) l = rng.uniform() < 0.4;
  const std::vector<double> w{0.5, 0.5};
  auto forward = [&] { return head.forward(block.forward(stem.forward(x), Mode::kTrain)); };
  const auto report = grad_check<double>(
      [&] { return cross_entropy(forward(), labels); },
      [&] { stem.backward(block.backward(head.backward(cross_entropy_grad(forward(), labels, w)))); },
      params, 30, 1e-6, 4, 1e-8);
  EXPECT_LT(report.max_rel_error, 1e-3);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter<double> w;
  w.resize({1, 1, 1, 2});
  w.value[0] = 1.0;
  w.value[1] = -1.0;
  ParamList<double> params;
  params.add("w", w);
  Adam<double> adam(params, {.lr = 0.1});
  w.grad[0] = 3.0;
  w.grad[1] = -0.5;
  adam.step();
  EXPECT_NEAR(w.value[0], 0.9, 1e-6);
  EXPECT_NEAR(w.value[1], -0.9, 1e-6);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Tensor, ConcatAndSplitAreInverse) {
  Rng rng(6);
  const auto a = random_tensor<float>({2, 3, 4, 4}, rng);
  const auto b = random_tensor<float>({2, 5, 4, 4}, rng);
  Tensor<float> a2, b2;
  split_channels(concat_channels(a, b), 3, a2, b2);
  EXPECT_EQ(a, a2);
  EXPECT_EQ(b, b2);
  EXPECT_THROW(concat_channels(a, random_tensor<float>({2, 5, 3, 4}, rng)), ShapeError);
}
