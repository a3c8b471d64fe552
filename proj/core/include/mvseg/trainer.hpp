#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mvseg/datastore.hpp"
#include "mvseg/metrics.hpp"
#include "mvseg/mv_unet.hpp"
#include "mvseg/shape_mae.hpp"

namespace mvseg {

struct TrainCommon {
  fs::path dataset;
  fs::path out_dir;
  int epochs = 200;
  int batch = 10;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double fraction = 1.0;
  // Continue from <out_dir>/last.ckpt when present.
  bool resume = true;

  void validate() const;
};

struct ShapeMaeTrainConfig : TrainCommon {
  ShapeMaeTrainConfig() { lr = 1e-4; }
  LossWeights weights;
  ShapeMaeConfig model;
};

struct SegmenterTrainConfig : TrainCommon {
  UNetConfig model;
  fs::path priors_dir;  // required when model.fuse_enabled
  std::int64_t max_steps = 0;  // 0 = no limit
};

struct EpochRecord {
  int epoch = 0;
  double total = 0.0;
  std::vector<double> components;  // intra, inter, reg  or  cross_entropy
  std::int64_t steps = 0;
};

struct TrainHooks {
  std::function<void(std::int64_t step, double loss)> on_step;
  // Returning true stops training after this epoch.
  std::function<bool(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  fs::path final_checkpoint;
  fs::path best_checkpoint;
  fs::path loss_log;
  std::vector<EpochRecord> history;  // epochs run by this call
  int epochs_completed = 0;
  std::int64_t steps = 0;
  bool stopped_early = false;
};

// Writes <out_dir>/{config.json, run_manifest.json, loss.csv, last.ckpt,
// best.ckpt, final.ckpt}.
TrainResult train_shape_mae(const ShapeMaeTrainConfig& cfg, const TrainHooks& hooks = {});
TrainResult train_segmenter(const SegmenterTrainConfig& cfg, const TrainHooks& hooks = {});

// Loss log rows as written: epoch followed by total and components.
std::vector<std::vector<double>> read_loss_log(const fs::path& path);

std::unique_ptr<ShapeMae<float>> load_shape_mae(const fs::path& checkpoint);
std::unique_ptr<UNet<float>> load_segmenter(const fs::path& checkpoint);
std::string shape_mae_config_json(const ShapeMaeConfig& cfg);
std::string unet_config_json(const UNetConfig& cfg);

// Batched per-slice inference; priors are read from `priors_dir` when the
// model has a Fuse Block.
SlicePredictor segmenter_predictor(UNet<float>& model, const fs::path& priors_dir);

struct ExperimentConfig {
  fs::path dataset;
  fs::path out_dir;
  std::vector<ModelKind> models{ModelKind::kMvUnet, ModelKind::kUnet2d};
  std::vector<double> fractions{0.1};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  ShapeMaeTrainConfig shape_mae;
  SegmenterTrainConfig segmenter;
};

struct CellResult {
  ModelKind model = ModelKind::kUnet2d;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  fs::path dir;
  bool ok = false;
  bool reused = false;
  std::string error;
  EvalReport report;
};

struct ExperimentResult {
  std::vector<CellResult> cells;
  std::string table;
};

std::string cell_name(ModelKind model, double fraction, std::uint64_t seed);

// Trains and evaluates every model x fraction x seed cell on the test
// split. Cells with a stored report and final checkpoint are reused.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::function<void(const CellResult&)>& on_cell = {});

}  // namespace mvseg
