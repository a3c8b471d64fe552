#include <gtest/gtest.h>

#include "mvseg/config.hpp"
#include "mvseg/overlay.hpp"
#include "test_support.hpp"

using namespace mvseg;

TEST(Config, DefaultsFollowTrainingProtocol) {
  const RunConfig c = parse_config("");
  EXPECT_EQ(c.shape_mae.epochs, 200);
  EXPECT_EQ(c.shape_mae.batch, 10);
  EXPECT_DOUBLE_EQ(c.shape_mae.lr, 1e-4);
  EXPECT_DOUBLE_EQ(c.segmenter.lr, 1e-3);
  EXPECT_DOUBLE_EQ(c.shape_mae.weights.alpha, 0.5);
  EXPECT_DOUBLE_EQ(c.shape_mae.weights.beta, 0.001);
}

TEST(Config, SectionsAndTrainerPropagation) {
  const RunConfig c = parse_config(R"(
[trainer]
dataset = data
out = runs/a
seed = 9
fraction = 0.1
epochs = 50

[shape_mae]
beta = 0.01
widths = 8, 16, 32, 32

[segmenter]
fuse_enabled = false
base_filters = 8
priors_path = pri
)");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.shape_mae.seed, 9u);
  EXPECT_EQ(c.segmenter.seed, 9u);
  EXPECT_DOUBLE_EQ(c.segmenter.fraction, 0.1);
  EXPECT_EQ(c.shape_mae.epochs, 50);
  EXPECT_EQ(c.segmenter.epochs, 50);
  EXPECT_DOUBLE_EQ(c.shape_mae.weights.beta, 0.01);
  EXPECT_EQ(c.shape_mae.model.widths, (std::array<int, 4>{8, 16, 32, 32}));
  EXPECT_FALSE(c.segmenter.model.fuse_enabled);
  EXPECT_EQ(c.segmenter.model.base_filters, 8);
  EXPECT_EQ(c.segmenter.priors_dir, fs::path("pri"));
  EXPECT_EQ(c.dataset, fs::path("data"));
}

TEST(Config, SectionValueBeatsTrainerDefault) {
  const RunConfig c = parse_config("[trainer]\nepochs = 50\n[shape_mae]\nepochs = 7\n");
  EXPECT_EQ(c.shape_mae.epochs, 7);
  EXPECT_EQ(c.segmenter.epochs, 50);
}

TEST(Config, UnknownKeysAndSectionsAreErrors) {
  EXPECT_THROW(parse_config("[trainer]\nlearning_rate = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[optimizer]\nlr = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[shape_mae]\nalpha = abc\n"), ConfigError);
  EXPECT_THROW(parse_config("[segmenter]\nlr = -1\n"), ConfigError);
}

TEST(Config, PhantomSection) {
  const RunConfig c = parse_config("[phantom]\nn_subjects = 20\nendo_a = 21, 23\nslice_spacing = 12\n");
  EXPECT_EQ(c.n_subjects, 20);
  EXPECT_DOUBLE_EQ(c.phantom.ranges.endo_a.lo, 21.0);
  EXPECT_DOUBLE_EQ(c.phantom.ranges.endo_a.hi, 23.0);
  EXPECT_DOUBLE_EQ(c.phantom.view.slice_spacing, 12.0);
}

TEST(Config, CanonicalTextRoundTrips) {
  RunConfig c = parse_config("[trainer]\nseed = 3\n[shape_mae]\nalpha = 0.25\n");
  c.set_fraction(0.5);
  const std::string text = to_ini(c);
  EXPECT_EQ(to_ini(parse_config(text)), text);
}

TEST(Config, SetSeedOverridesEverySeed) {
  RunConfig c = parse_config("[shape_mae]\nseed = 4\n[segmenter]\nseed = 5\n");
  c.set_seed(11);
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(c.shape_mae.seed, 11u);
  EXPECT_EQ(c.segmenter.seed, 11u);
}

TEST(Config, MissingFile) { EXPECT_THROW(load_config("/nonexistent/x.ini"), NotFoundError); }

TEST(Overlay, ContourOfFilledSquare) {
  Mask m(6, 6);
  for (int r = 1; r < 5; ++r) {
    for (int c = 1; c < 5; ++c) m(r, c) = 1;
  }
  const Mask c = contour(m);
  EXPECT_EQ(foreground_count(c), 12u);
  EXPECT_EQ(c(2, 2), 0);
  EXPECT_EQ(c(1, 1), 1);
}

TEST(Overlay, ColorsAndPngRoundTrip) {
  Image img(8, 8, 0.5f);
  Mask truth(8, 8), pred(8, 8);
  truth(2, 2) = 1;
  pred(2, 2) = 1;
  truth(5, 5) = 1;
  pred(6, 1) = 1;
  const RgbImage o = render_overlay(img, truth, pred, 2);
  ASSERT_EQ(o.rows, 16);
  ASSERT_EQ(o.cols, 16);
  auto px = [&](int r, int c) {
    const std::size_t k = (static_cast<std::size_t>(r) * o.cols + c) * 3;
    return std::array<int, 3>{o.pixels[k], o.pixels[k + 1], o.pixels[k + 2]};
  };
  EXPECT_EQ(px(4, 4), (std::array<int, 3>{255, 255, 0}));
  EXPECT_EQ(px(10, 10), (std::array<int, 3>{0, 255, 0}));
  EXPECT_EQ(px(12, 2), (std::array<int, 3>{255, 0, 0}));
  EXPECT_EQ(px(0, 0)[0], px(0, 0)[1]);

  test::TempDir dir("png");
  write_png(dir.path() / "o.png", o);
  const RgbImage back = read_png(dir.path() / "o.png");
  EXPECT_EQ(back.rows, o.rows);
  EXPECT_EQ(back.pixels, o.pixels);
  EXPECT_THROW(read_png(dir.path() / "missing.png"), Error);
}
