#include <gtest/gtest.h>

#include <cmath>

#include "mvseg/trainer.hpp"
#include "test_support.hpp"

using namespace mvseg;

namespace {

// Shared tiny dataset: 5 subjects, 3 train / 2 test.
class TrainerTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir("trainer");
    DatasetOptions opt;
    opt.train_fraction = 0.6;
    generate_dataset(5, 13, dir_->path() / "data", opt);
  }
  static void TearDownTestSuite() { delete dir_; }

  static fs::path data() { return dir_->path() / "data"; }
  fs::path out(const std::string& name) { return runs_.path() / name; }

  ShapeMaeTrainConfig shape_cfg(const std::string& name) {
    ShapeMaeTrainConfig c;
    c.dataset = data();
    c.out_dir = out(name);
    c.model.widths = {4, 8, 8, 8};
    c.epochs = 2;
    c.batch = 2;
    c.lr = 1e-3;
    return c;
  }
  SegmenterTrainConfig seg_cfg(const std::string& name, bool fuse) {
    SegmenterTrainConfig c;
    c.dataset = data();
    c.out_dir = out(name);
    c.model.base_filters = 4;
    c.model.fuse_enabled = fuse;
    c.epochs = 1;
    c.batch = 8;
    return c;
  }
  fs::path priors() {
    const fs::path p = runs_.path() / "priors";
    if (!fs::exists(p)) {
      ShapeMaeConfig c;
      c.widths = {4, 8, 8, 8};
      ShapeMae<float> m(c);
      m.init(1);
      encode_priors(read_manifest(data()), m, p);
    }
    return p;
  }

  static test::TempDir* dir_;
  test::TempDir runs_{"runs"};
};
test::TempDir* TrainerTest::dir_ = nullptr;

}  // namespace

TEST_F(TrainerTest, ShapeMaeWritesArtifactsAndLogsDecomposedLoss) {
  const auto cfg = shape_cfg("sm");
  const TrainResult r = train_shape_mae(cfg);
  EXPECT_EQ(r.epochs_completed, 2);
  EXPECT_EQ(r.steps, 4);  // 3 subjects, batch 2
  for (const char* f : {"config.json", "run_manifest.json", "loss.csv", "last.ckpt", "best.ckpt", "final.ckpt"}) {
    EXPECT_TRUE(fs::exists(cfg.out_dir / f)) << f;
  }
  const auto rows = read_loss_log(cfg.out_dir / "loss.csv");
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& row : rows) {
    ASSERT_EQ(row.size(), 5u);
    EXPECT_NEAR(row[1], row[2] + 0.5 * row[3] + 0.001 * row[4], 1e-9 * row[1]);
  }
  EXPECT_EQ(rows[0][1], r.history[0].total);
}

TEST_F(TrainerTest, SameSeedSameFirstEpochLoss) {
  const TrainResult a = train_shape_mae(shape_cfg("a"));
  const TrainResult b = train_shape_mae(shape_cfg("b"));
  EXPECT_NEAR(a.history[0].total, b.history[0].total, 1e-6 * a.history[0].total);
  EXPECT_EQ(test::file_bytes(out("a") / "final.ckpt"), test::file_bytes(out("b") / "final.ckpt"));
}

TEST_F(TrainerTest, ResumeContinuesWithoutRepeatingEpochs) {
  auto cfg = shape_cfg("resume");
  cfg.epochs = 1;
  train_shape_mae(cfg);
  cfg.epochs = 3;
  std::vector<std::int64_t> steps;
  TrainHooks hooks;
  hooks.on_step = [&](std::int64_t s, double) { steps.push_back(s); };
  const TrainResult r = train_shape_mae(cfg, hooks);
  EXPECT_EQ(r.history.size(), 2u);
  EXPECT_EQ(r.history.front().epoch, 2);
  EXPECT_EQ(steps.front(), 3);
  EXPECT_EQ(read_loss_log(cfg.out_dir / "loss.csv").size(), 3u);

  const auto straight = shape_cfg("straight");
  auto s3 = straight;
  s3.epochs = 3;
  train_shape_mae(s3);
  EXPECT_EQ(read_loss_log(s3.out_dir / "loss.csv"), read_loss_log(cfg.out_dir / "loss.csv"));
}

TEST_F(TrainerTest, ResumeWithDifferentConfigIsRefused) {
  auto cfg = shape_cfg("conflict");
  cfg.epochs = 1;
  train_shape_mae(cfg);
  cfg.lr = 5e-4;
  cfg.epochs = 2;
  EXPECT_THROW(train_shape_mae(cfg), ConfigError);
}

TEST_F(TrainerTest, EarlyStopHook) {
  auto cfg = shape_cfg("stop");
  cfg.epochs = 5;
  TrainHooks hooks;
  hooks.on_epoch = [](const EpochRecord& r) { return r.epoch == 2; };
  const TrainResult r = train_shape_mae(cfg, hooks);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(r.epochs_completed, 2);
  EXPECT_TRUE(fs::exists(r.final_checkpoint));
}

TEST_F(TrainerTest, DivergenceIsReportedWithContext) {
  auto cfg = shape_cfg("nan");
  cfg.lr = 1e30;
  cfg.epochs = 3;
  try {
    train_shape_mae(cfg);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch"), std::string::npos) << msg;
    EXPECT_NE(msg.find("lr"), std::string::npos) << msg;
  }
}

TEST_F(TrainerTest, InvalidConfigs) {
  auto cfg = shape_cfg("bad");
  cfg.fraction = 0.0;
  EXPECT_THROW(train_shape_mae(cfg), ConfigError);
  cfg = shape_cfg("bad");
  cfg.lr = 0.0;
  EXPECT_THROW(train_shape_mae(cfg), ConfigError);
  cfg = shape_cfg("bad");
  cfg.epochs = 0;
  EXPECT_THROW(train_shape_mae(cfg), ConfigError);
}

TEST_F(TrainerTest, SegmenterTrainsAndPredicts) {
  auto cfg = seg_cfg("unet2d", false);
  cfg.max_steps = 2;
  const TrainResult r = train_segmenter(cfg);
  EXPECT_EQ(r.steps, 2);
  auto model = load_segmenter(r.final_checkpoint);
  EXPECT_FALSE(model->config().fuse_enabled);
  const DatasetManifest m = read_manifest(data());
  const Subject s = read_subject(m.subject_dir(m.ids(Split::kTest)[0]));
  const auto pred = segmenter_predictor(*model, {})(s);
  EXPECT_EQ(pred.size(), s.sa_masks.size());
  EXPECT_TRUE(pred[0].same_shape(s.sa_masks[0]));
  EXPECT_EQ(read_loss_log(cfg.out_dir / "loss.csv").front().size(), 3u);
}

TEST_F(TrainerTest, MvUnetNeedsEveryPrior) {
  auto cfg = seg_cfg("mv", true);
  EXPECT_THROW(train_segmenter(cfg), ConfigError);
  cfg.priors_dir = runs_.path() / "empty_priors";
  fs::create_directories(cfg.priors_dir);
  try {
    train_segmenter(cfg);
    FAIL();
  } catch (const NotFoundError& e) {
    EXPECT_NE(std::string(e.what()).find("s00"), std::string::npos) << e.what();
  }
  cfg.priors_dir = priors();
  cfg.max_steps = 1;
  const TrainResult r = train_segmenter(cfg);
  auto model = load_segmenter(r.final_checkpoint);
  EXPECT_TRUE(model->config().fuse_enabled);
}

TEST_F(TrainerTest, FractionIsRecordedInRunManifest) {
  auto cfg = seg_cfg("frac", false);
  cfg.fraction = 0.34;  // ceil(0.34 * 3) = 2
  cfg.max_steps = 1;
  train_segmenter(cfg);
  const std::string manifest = read_text(cfg.out_dir / "run_manifest.json");
  const DatasetManifest m = read_manifest(data());
  int listed = 0;
  for (const auto& id : m.ids(Split::kTrain)) listed += manifest.find(id) != std::string::npos;
  EXPECT_EQ(listed, 2);
}

TEST_F(TrainerTest, LoadWrongKindFails) {
  train_shape_mae(shape_cfg("kind"));
  EXPECT_THROW(load_segmenter(out("kind") / "final.ckpt"), ModelMismatch);
  EXPECT_NO_THROW(load_shape_mae(out("kind") / "final.ckpt"));
}

TEST(CellName, Format) {
  EXPECT_EQ(cell_name(ModelKind::kMvUnet, 0.1, 2), "mv_unet_f0.1_s2");
  EXPECT_EQ(cell_name(ModelKind::kUnet2d, 1.0, 0), "unet2d_f1_s0");
}

TEST_F(TrainerTest, ExperimentMatrixCardinalityAndReuse) {
  ExperimentConfig e;
  e.dataset = data();
  e.out_dir = out("exp");
  e.seeds = {0, 1, 2};
  e.fractions = {1.0};
  e.shape_mae.model.widths = {4, 8, 8, 8};
  e.shape_mae.epochs = 1;
  e.segmenter.model.base_filters = 4;
  e.segmenter.epochs = 1;
  e.segmenter.max_steps = 1;
  const ExperimentResult r = run_experiment(e);
  ASSERT_EQ(r.cells.size(), 6u);
  int ckpts = 0, reports = 0;
  for (const auto& c : r.cells) {
    EXPECT_TRUE(c.ok) << c.error;
    ckpts += fs::exists(c.dir / "segmenter" / "final.ckpt");
    reports += fs::exists(c.dir / "report.json");
  }
  EXPECT_EQ(ckpts, 6);
  EXPECT_EQ(reports, 6);
  EXPECT_TRUE(fs::exists(e.out_dir / "summary.txt"));
  EXPECT_NE(r.table.find("mv_unet"), std::string::npos);
  const ExperimentResult again = run_experiment(e);
  for (const auto& c : again.cells) EXPECT_TRUE(c.reused);
}
