#include <gtest/gtest.h>

#include <cmath>

#include "mvseg/datastore.hpp"
#include "mvseg/mv_unet.hpp"
#include "test_support.hpp"

using namespace mvseg;

namespace {

void truncate_by(const fs::path& p, std::uintmax_t n) { fs::resize_file(p, fs::file_size(p) - n); }

DatasetManifest synthetic_manifest(int n_train, int n_test) {
  DatasetManifest m;
  for (int k = 0; k < n_train + n_test; ++k) {
    char id[16];
    std::snprintf(id, sizeof id, "s%04d", k);
    m.subjects.push_back({id, id, static_cast<std::uint64_t>(k), k < n_train ? Split::kTrain : Split::kTest});
  }
  return m;
}

}  // namespace

class SubjectStoreTest : public ::testing::Test {
 protected:
  void SetUp() override { subject = generate_subject(sample_anatomy(2, {}), {}, 5, "s0002"); }
  test::TempDir dir{"store"};
  Subject subject;
};

TEST_F(SubjectStoreTest, RoundTripPreservesEverything) {
  write_subject(subject, dir.path() / "s");
  const Subject back = read_subject(dir.path() / "s");
  EXPECT_EQ(back.id, subject.id);
  EXPECT_EQ(back.seed, subject.seed);
  EXPECT_EQ(back.anatomy, subject.anatomy);
  EXPECT_EQ(back.sa_images, subject.sa_images);
  EXPECT_EQ(back.sa_masks, subject.sa_masks);
  EXPECT_EQ(back.la_images, subject.la_images);
  EXPECT_EQ(back.la_masks, subject.la_masks);
  EXPECT_EQ(back.targets, subject.targets);
  for (std::size_t k = 0; k < subject.sa_planes.size(); ++k) {
    EXPECT_LT((back.sa_planes[k].origin - subject.sa_planes[k].origin).norm(), 1e-12);
  }
  write_subject(back, dir.path() / "again");
  EXPECT_EQ(test::tree_bytes(dir.path() / "s"), test::tree_bytes(dir.path() / "again"));
}

TEST_F(SubjectStoreTest, TruncatedRawFileNamesTheFile) {
  write_subject(subject, dir.path() / "s");
  truncate_by(dir.path() / "s" / "la2_img.f32le", 1);
  try {
    read_subject(dir.path() / "s");
    FAIL() << "expected CorruptionError";
  } catch (const CorruptionError& e) {
    EXPECT_NE(std::string(e.what()).find("la2_img.f32le"), std::string::npos) << e.what();
  }
}

TEST_F(SubjectStoreTest, TamperedTargetsAreDetected) {
  write_subject(subject, dir.path() / "s");
  auto t = read_u8(dir.path() / "s" / "targets.u8", 6 * 128 * 128);
  t[5 * 128 * 128 + 100] ^= 1;
  write_u8(dir.path() / "s" / "targets.u8", t);
  EXPECT_THROW(read_subject(dir.path() / "s"), CorruptionError);
}

TEST(RawArrays, ByteCountChecks) {
  test::TempDir dir("raw");
  const std::vector<float> v(128 * 128, 0.25f);
  write_f32le(dir.path() / "a.f32le", v);
  EXPECT_EQ(fs::file_size(dir.path() / "a.f32le"), 128u * 128u * 4u);
  EXPECT_EQ(read_f32le(dir.path() / "a.f32le", 128 * 128), v);
  write_f32le(dir.path() / "b.f32le", std::vector<float>(128 * 127));
  EXPECT_THROW(read_f32le(dir.path() / "b.f32le", 128 * 128), CorruptionError);
  EXPECT_THROW(read_f32le(dir.path() / "missing.f32le", 1), NotFoundError);
}

TEST(RawArrays, LittleEndianLayout) {
  test::TempDir dir("endian");
  write_f32le(dir.path() / "one.f32le", std::vector<float>{1.0f});
  EXPECT_EQ(test::file_bytes(dir.path() / "one.f32le"), std::string("\x00\x00\x80\x3f", 4));
}

TEST(Manifest, RoundTripAndDuplicateIds) {
  test::TempDir dir("manifest");
  DatasetManifest m = synthetic_manifest(3, 2);
  for (const auto& e : m.subjects) fs::create_directories(dir.path() / e.path);
  m.config_hash = fnv1a_hex("x");
  write_manifest(m, dir.path());
  const DatasetManifest back = read_manifest(dir.path());
  EXPECT_EQ(back.subjects, m.subjects);
  EXPECT_EQ(back.config_hash, m.config_hash);
  EXPECT_EQ(back.root, dir.path());
  m.subjects.push_back(m.subjects.front());
  EXPECT_THROW(m.validate(), CorruptionError);
}

TEST(Manifest, MissingSubjectDirectoryIsReported) {
  test::TempDir dir("manifest_missing");
  DatasetManifest m = synthetic_manifest(2, 1);
  write_manifest(m, dir.path());
  EXPECT_THROW(read_manifest(dir.path()), NotFoundError);
  EXPECT_THROW(read_manifest(dir.path() / "nope"), NotFoundError);
}

TEST(Manifest, FutureVersionIsRejected) {
  test::TempDir dir("manifest_version");
  DatasetManifest m = synthetic_manifest(1, 1);
  for (const auto& e : m.subjects) fs::create_directories(dir.path() / e.path);
  m.format_version = kDatasetFormatVersion + 1;
  write_manifest(m, dir.path());
  EXPECT_THROW(read_manifest(dir.path()), VersionError);
}

TEST(SubsampleSplit, TenPercentOf570) {
  const DatasetManifest m = synthetic_manifest(570, 30);
  const DatasetManifest s = subsample_split(m, 0.1, 4);
  EXPECT_EQ(s.ids(Split::kTrain).size(), 57u);
  EXPECT_EQ(s.ids(Split::kTest), m.ids(Split::kTest));
  EXPECT_EQ(subsample_split(m, 0.1, 4).ids(Split::kTrain), s.ids(Split::kTrain));
  EXPECT_NE(subsample_split(m, 0.1, 5).ids(Split::kTrain), s.ids(Split::kTrain));
}

TEST(SubsampleSplit, FullFractionIsIdentity) {
  const DatasetManifest m = synthetic_manifest(20, 5);
  EXPECT_EQ(subsample_split(m, 1.0, 0).subjects, m.subjects);
  EXPECT_THROW(subsample_split(m, 0.0, 0), ConfigError);
  EXPECT_EQ(subsample_split(m, 0.01, 0).ids(Split::kTrain).size(), 1u);
}

TEST(Priors, FileIs8192BytesAndRoundTrips) {
  test::TempDir dir("priors");
  PriorCodes codes;
  Rng rng(1);
  for (auto& c : codes) {
    c.resize(kCodeSize);
    for (auto& v : c) v = static_cast<float>(rng.uniform());
  }
  const fs::path p = prior_path(dir.path(), "s0001");
  write_priors(p, codes);
  EXPECT_EQ(fs::file_size(p), 8192u);
  EXPECT_EQ(read_priors(p), codes);
  truncate_by(p, 4);
  EXPECT_THROW(read_priors(p), CorruptionError);
}

TEST(Priors, MissingViewIsRejected) {
  test::TempDir dir("priors_missing");
  PriorCodes codes;
  codes[0].resize(kCodeSize);
  EXPECT_THROW(write_priors(dir.path() / "x.f32le", codes), Error);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg.base_filters = 4;
    cfg.image_size = 32;
    model = std::make_unique<UNet<float>>(cfg);
    model->init(3);
    ck.kind = ModelKind::kMvUnet;
    ck.epoch = 7;
    ck.optimizer_steps = 70;
    ck.rng_state = "rng";
    ck.config_json = R"({"a":1})";
    ck.weights = export_arrays(model->params());
  }
  UNetConfig cfg;
  std::unique_ptr<UNet<float>> model;
  Checkpoint ck;
  test::TempDir dir{"ckpt"};
};

TEST_F(CheckpointTest, SaveLoadSaveIsByteIdentical) {
  save_checkpoint(ck, dir.path() / "a.ckpt");
  const Checkpoint back = load_checkpoint(dir.path() / "a.ckpt");
  EXPECT_EQ(back.epoch, 7);
  EXPECT_EQ(back.optimizer_steps, 70);
  EXPECT_EQ(back.kind, ModelKind::kMvUnet);
  EXPECT_EQ(back.weights, ck.weights);
  save_checkpoint(back, dir.path() / "b.ckpt");
  EXPECT_EQ(test::file_bytes(dir.path() / "a.ckpt"), test::file_bytes(dir.path() / "b.ckpt"));
  EXPECT_FALSE(fs::exists(dir.path() / "a.ckpt.tmp"));
}

TEST_F(CheckpointTest, ImportRestoresWeights) {
  save_checkpoint(ck, dir.path() / "a.ckpt");
  UNet<float> other(cfg);
  other.init(99);
  auto params = other.params();
  import_weights(load_checkpoint(dir.path() / "a.ckpt"), params);
  Rng rng(4);
  const auto x = test::random_tensor<float>({1, 1, 32, 32}, rng);
  const auto p = test::random_tensor<float>({1, 32, 2, 2}, rng);
  EXPECT_EQ(other.forward(x, p), model->forward(x, p));
}

TEST_F(CheckpointTest, RenamedWeightIsNamed) {
  ck.weights[3].name = "bogus.weight";
  const std::string original = export_arrays(model->params())[3].name;
  save_checkpoint(ck, dir.path() / "a.ckpt");
  auto params = model->params();
  try {
    import_weights(load_checkpoint(dir.path() / "a.ckpt"), params);
    FAIL() << "expected ModelMismatch";
  } catch (const ModelMismatch& e) {
    EXPECT_NE(std::string(e.what()).find("bogus.weight"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find(original), std::string::npos) << e.what();
  }
}

TEST_F(CheckpointTest, DifferentArchitectureIsRejected) {
  save_checkpoint(ck, dir.path() / "a.ckpt");
  UNetConfig wider = cfg;
  wider.base_filters = 8;
  UNet<float> other(wider);
  auto params = other.params();
  EXPECT_THROW(import_weights(load_checkpoint(dir.path() / "a.ckpt"), params), ModelMismatch);
}

TEST_F(CheckpointTest, TruncationAndBadMagic) {
  save_checkpoint(ck, dir.path() / "a.ckpt");
  fs::copy_file(dir.path() / "a.ckpt", dir.path() / "t.ckpt");
  truncate_by(dir.path() / "t.ckpt", 10);
  EXPECT_THROW(load_checkpoint(dir.path() / "t.ckpt"), CorruptionError);
  write_text_atomic(dir.path() / "junk.ckpt", "definitely not a checkpoint");
  EXPECT_THROW(load_checkpoint(dir.path() / "junk.ckpt"), CorruptionError);
  EXPECT_THROW(load_checkpoint(dir.path() / "none.ckpt"), NotFoundError);
}

TEST_F(CheckpointTest, DoubleWeightsImportIntoFloatModel) {
  UNet<double> dmodel(cfg);
  dmodel.init(3);
  ck.weights = export_arrays(dmodel.params());
  EXPECT_EQ(ck.weights[0].dtype, "f64le");
  UNet<float> fmodel(cfg);
  auto params = fmodel.params();
  import_weights(ck, params);
  EXPECT_EQ(export_arrays(fmodel.params()), export_arrays(model->params()));
}

TEST(ModelKind, ParseAndPrint) {
  for (ModelKind k : {ModelKind::kShapeMae, ModelKind::kMvUnet, ModelKind::kUnet2d}) {
    EXPECT_EQ(parse_model_kind(to_string(k)), k);
  }
  try {
    parse_model_kind("resnet");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("shape_mae"), std::string::npos);
    EXPECT_NE(msg.find("unet2d"), std::string::npos);
  }
}
