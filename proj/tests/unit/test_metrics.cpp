#include <gtest/gtest.h>

#include <cmath>

#include "mvseg/metrics.hpp"
#include "mvseg/phantom.hpp"
#include "mvseg/rng.hpp"
#include "test_support.hpp"

using namespace mvseg;

namespace {

Mask block(int rows, int cols, int r0, int c0, int h, int w) {
  Mask m(rows, cols);
  for (int r = r0; r < r0 + h; ++r) {
    for (int c = c0; c < c0 + w; ++c) m(r, c) = 1;
  }
  return m;
}

double brute_hausdorff(const Mask& a, const Mask& b, PixelSpacing s) {
  auto directed = [&](const Mask& x, const Mask& y) {
    double worst = 0.0;
    for (int r = 0; r < x.rows(); ++r) {
      for (int c = 0; c < x.cols(); ++c) {
        if (!x(r, c)) continue;
        double best = INFINITY;
        for (int rr = 0; rr < y.rows(); ++rr) {
          for (int cc = 0; cc < y.cols(); ++cc) {
            if (y(rr, cc)) best = std::min(best, std::hypot((r - rr) * s.row, (c - cc) * s.col));
          }
        }
        worst = std::max(worst, best);
      }
    }
    return worst;
  };
  return std::max(directed(a, b), directed(b, a));
}

}  // namespace

TEST(Dice, IdenticalAndDisjoint) {
  const Mask a = block(8, 8, 1, 1, 3, 3);
  EXPECT_DOUBLE_EQ(dice(a, a), 1.0);
  EXPECT_DOUBLE_EQ(dice(a, block(8, 8, 5, 5, 2, 2)), 0.0);
}

TEST(Dice, ShiftedBlockHalfOverlap) {
  EXPECT_DOUBLE_EQ(dice(block(6, 6, 1, 1, 2, 2), block(6, 6, 1, 2, 2, 2)), 0.5);
}

TEST(Dice, BothEmptyIsOne) { EXPECT_DOUBLE_EQ(dice(Mask(4, 4), Mask(4, 4)), 1.0); }

TEST(Dice, ShapeMismatchThrows) { EXPECT_THROW(dice(Mask(4, 4), Mask(4, 5)), ShapeError); }

TEST(Hausdorff, SinglePixelsFiveApart) {
  Mask a(8, 8), b(8, 8);
  a(0, 0) = 1;
  b(0, 5) = 1;
  EXPECT_NEAR(hausdorff(a, b, {1.8, 1.8}), 9.0, 1e-12);
}

TEST(Hausdorff, IdenticalIsZero) {
  const Mask a = block(10, 10, 2, 3, 4, 2);
  EXPECT_EQ(hausdorff(a, a, {1.8, 1.8}), 0.0);
}

TEST(Hausdorff, EmptyConventions) {
  const PixelSpacing s{1.8, 1.8};
  EXPECT_EQ(hausdorff(Mask(16, 16), Mask(16, 16), s), 0.0);
  EXPECT_NEAR(hausdorff(block(16, 16, 0, 0, 1, 1), Mask(16, 16), s), std::hypot(16 * 1.8, 16 * 1.8),
              1e-12);
}

TEST(Hausdorff, AnisotropicSpacing) {
  Mask a(8, 8), b(8, 8);
  a(1, 1) = 1;
  b(4, 5) = 1;
  EXPECT_NEAR(hausdorff(a, b, {2.0, 0.5}), std::hypot(3 * 2.0, 4 * 0.5), 1e-12);
}

TEST(Hausdorff, MatchesBruteForceOnRandomPairs) {
  Rng rng(77);
  for (int k = 0; k < 100; ++k) {
    Mask a(16, 16), b(16, 16);
    const double p = rng.uniform(0.01, 0.5);
    for (auto& v : a.values()) v = rng.uniform() < p;
    for (auto& v : b.values()) v = rng.uniform() < p;
    if (!foreground_count(a) || !foreground_count(b)) continue;
    EXPECT_NEAR(hausdorff(a, b, {1.8, 1.2}), brute_hausdorff(a, b, {1.8, 1.2}), 1e-9);
  }
}

TEST(Summarize, PopulationStd) {
  const Summary s = summarize({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.std, std::sqrt(1.25));
  EXPECT_EQ(s.n, 4);
  EXPECT_EQ(summarize({}).n, 0);
}

class EvaluateTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir("eval");
    DatasetOptions opt;
    opt.train_fraction = 0.6;
    manifest_ = new DatasetManifest(generate_dataset(5, 21, dir_->path() / "d", opt));
  }
  static void TearDownTestSuite() {
    delete manifest_;
    delete dir_;
  }
  static test::TempDir* dir_;
  static DatasetManifest* manifest_;
};
test::TempDir* EvaluateTest::dir_ = nullptr;
DatasetManifest* EvaluateTest::manifest_ = nullptr;

TEST_F(EvaluateTest, PerfectPredictorScoresOneAndZero) {
  const SlicePredictor oracle = [](const Subject& s) { return s.sa_masks; };
  const EvalReport r = evaluate(oracle, *manifest_, Split::kTest, "oracle");
  EXPECT_TRUE(r.failures.empty());
  for (SliceRegion reg : kRegions) {
    EXPECT_GT(r.dice(reg).n, 0);
    EXPECT_DOUBLE_EQ(r.dice(reg).mean, 1.0);
    EXPECT_DOUBLE_EQ(r.dice(reg).std, 0.0);
    EXPECT_DOUBLE_EQ(r.hd(reg).mean, 0.0);
    EXPECT_DOUBLE_EQ(r.hd(reg).std, 0.0);
  }
}

TEST_F(EvaluateTest, BackgroundPredictorGetsDiagonalPenalty) {
  const SlicePredictor empty = [](const Subject& s) {
    std::vector<Mask> out;
    for (const auto& m : s.sa_masks) out.emplace_back(m.rows(), m.cols());
    return out;
  };
  const EvalReport r = evaluate(empty, *manifest_, Split::kTest, "background");
  const double diag = image_diagonal_mm(128, 128, {1.8, 1.8});
  for (SliceRegion reg : kRegions) {
    EXPECT_DOUBLE_EQ(r.dice(reg).mean, 0.0);
    EXPECT_NEAR(r.hd(reg).mean, diag, 1e-9);
  }
}

TEST_F(EvaluateTest, ThrowingPredictorIsRecordedAsFailure) {
  const SlicePredictor bad = [](const Subject& s) -> std::vector<Mask> {
    throw InputError("no priors for " + s.id);
  };
  const EvalReport r = evaluate(bad, *manifest_, Split::kTest, "bad");
  EXPECT_EQ(r.failures.size(), manifest_->ids(Split::kTest).size());
  EXPECT_EQ(r.slices(), 0);
}

TEST_F(EvaluateTest, JsonRoundTripAndTable) {
  const SlicePredictor oracle = [](const Subject& s) { return s.sa_masks; };
  const EvalReport r = evaluate(oracle, *manifest_, Split::kTest, "oracle");
  const EvalReport back = EvalReport::from_json(r.to_json());
  EXPECT_EQ(back.to_json(), r.to_json());
  const std::string table = render_table({{"oracle", r}});
  for (const char* h : {"Dice", "HD (mm)", "Apex", "Middle", "Base", "1.000 (0.000)", "0.00 (0.00)"}) {
    EXPECT_NE(table.find(h), std::string::npos) << h;
  }
  EXPECT_THROW(EvalReport::from_json("{}"), CorruptionError);
}

TEST(EvalReport, PooledConcatenatesScores) {
  EvalReport a, b;
  a.scores[0].dice = {1.0};
  a.scores[0].hd = {0.0};
  b.scores[0].dice = {0.5, 0.0};
  b.scores[0].hd = {2.0, 4.0};
  const EvalReport p = EvalReport::pooled({a, b}, "x");
  EXPECT_EQ(p.dice(SliceRegion::kApex).n, 3);
  EXPECT_DOUBLE_EQ(p.dice(SliceRegion::kApex).mean, 0.5);
  EXPECT_DOUBLE_EQ(p.hd(SliceRegion::kApex).mean, 2.0);
}
