#include "mvseg/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mvseg/error.hpp"
#include "mvseg/optim.hpp"

namespace mvseg {

using nlohmann::json;
using nn::Mode;
using nn::Tensor;

namespace {

constexpr const char* kLast = "last.ckpt";
constexpr const char* kBest = "best.ckpt";
constexpr const char* kFinal = "final.ckpt";
constexpr const char* kLossLog = "loss.csv";

json constants_json(const nn::BlockConstants& k) {
  return {{"leaky_slope", k.leaky_slope}, {"norm_eps", k.norm_eps}, {"bn_momentum", k.bn_momentum}};
}

nn::BlockConstants constants_from(const json& j) {
  nn::BlockConstants k;
  k.leaky_slope = j.at("leaky_slope").get<double>();
  k.norm_eps = j.at("norm_eps").get<double>();
  k.bn_momentum = j.at("bn_momentum").get<double>();
  return k;
}

json shape_model_json(const ShapeMaeConfig& c) {
  return {{"image_size", c.image_size},
          {"widths", c.widths},
          {"code_channels", c.code_channels},
          {"constants", constants_json(c.constants)}};
}

ShapeMaeConfig shape_model_from(const json& j) {
  ShapeMaeConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.widths = j.at("widths").get<std::array<int, 4>>();
  c.code_channels = j.at("code_channels").get<int>();
  c.constants = constants_from(j.at("constants"));
  return c;
}

json unet_model_json(const UNetConfig& c) {
  return {{"base_filters", c.base_filters},   {"image_size", c.image_size},
          {"num_classes", c.num_classes},     {"fuse_enabled", c.fuse_enabled},
          {"code_channels", c.code_channels}, {"constants", constants_json(c.constants)}};
}

UNetConfig unet_model_from(const json& j) {
  UNetConfig c;
  c.base_filters = j.at("base_filters").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.fuse_enabled = j.at("fuse_enabled").get<bool>();
  c.code_channels = j.at("code_channels").get<int>();
  c.constants = constants_from(j.at("constants"));
  return c;
}

json common_json(const TrainCommon& c) {
  return {{"batch", c.batch}, {"lr", c.lr}, {"seed", c.seed}, {"fraction", c.fraction}};
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct TrainingSet {
  DatasetManifest manifest;
  std::vector<std::string> ids;
  std::vector<Subject> subjects;
};

TrainingSet load_training_set(const TrainCommon& c) {
  TrainingSet t;
  const DatasetManifest full = read_manifest(c.dataset);
  t.manifest = subsample_split(full, c.fraction, c.seed);
  t.ids = t.manifest.ids(Split::kTrain);
  for (const auto& id : t.ids) t.subjects.push_back(read_subject(t.manifest.subject_dir(id)));
  fs::create_directories(c.out_dir);
  const json run = {{"dataset", fs::absolute(c.dataset).string()},
                    {"fraction", c.fraction},
                    {"seed", c.seed},
                    {"n_train_total", full.ids(Split::kTrain).size()},
                    {"n_train", t.ids.size()},
                    {"train_ids", t.ids}};
  write_text_atomic(c.out_dir / "run_manifest.json", run.dump(2) + "\n");
  return t;
}

// Append-only CSV loss log.
class LossLog {
 public:
  LossLog(const fs::path& path, const std::vector<std::string>& columns) : path_(path) {
    if (fs::exists(path)) {
      for (const auto& row : read_loss_log(path)) last_epoch_ = static_cast<int>(row.at(0));
      return;
    }
    std::ofstream out(path);
    for (std::size_t k = 0; k < columns.size(); ++k) out << (k ? "," : "") << columns[k];
    out << '\n';
  }

  double best_total() const {
    double best = std::numeric_limits<double>::infinity();
    if (!fs::exists(path_)) return best;
    for (const auto& row : read_loss_log(path_)) best = std::min(best, row.at(1));
    return best;
  }

  void append(const EpochRecord& r) {
    if (r.epoch <= last_epoch_) return;
    std::ofstream out(path_, std::ios::app);
    out << r.epoch << ',' << fmt_g(r.total);
    for (double v : r.components) out << ',' << fmt_g(v);
    out << '\n';
    out.flush();
    if (!out) throw InputError("cannot append to " + path_.string());
    last_epoch_ = r.epoch;
  }

 private:
  fs::path path_;
  int last_epoch_ = 0;
};

template <typename Model>
void save_state(const fs::path& path, ModelKind kind, int epoch, std::int64_t steps,
                const std::string& rng_state, const std::string& config, Model& model,
                nn::Adam<float>& adam) {
  Checkpoint ck;
  ck.kind = kind;
  ck.epoch = epoch;
  ck.optimizer_steps = steps;
  ck.rng_state = rng_state;
  ck.config_json = config;
  ck.weights = export_arrays(model.params());
  ck.optimizer = export_optimizer(adam);
  save_checkpoint(ck, path);
}

// Restores <out_dir>/last.ckpt when resuming; returns the completed epoch.
template <typename Model>
int maybe_resume(const TrainCommon& c, const json& config, Model& model, nn::Adam<float>& adam) {
  const fs::path last = c.out_dir / kLast;
  if (!c.resume || !fs::exists(last)) return 0;
  const Checkpoint ck = load_checkpoint(last);
  const json stored = json::parse(ck.config_json);
  if (stored.at("model") != config.at("model") || stored.at("train") != config.at("train")) {
    throw ConfigError("existing run in " + c.out_dir.string() +
                      " was trained with a different configuration; use a new output directory");
  }
  auto params = model.params();
  import_weights(ck, params);
  import_optimizer(ck, adam);
  spdlog::info("resuming from {} (epoch {})", last.string(), ck.epoch);
  return static_cast<int>(ck.epoch);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch, Rng& rng) {
  rng = Rng(mix_seed(seed, 0xE0000ULL + static_cast<std::uint64_t>(epoch)));
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < n; ++k) order[k] = k;
  rng.shuffle(order);
  return order;
}

[[noreturn]] void numerical_failure(const std::string& what, int epoch, std::size_t batch_id,
                                    double lr, const fs::path& out_dir) {
  throw NumericalError(what + " at epoch " + std::to_string(epoch) + ", batch " +
                       std::to_string(batch_id) + " (lr " + fmt_g(lr) +
                       "); last good checkpoint kept in " + out_dir.string());
}

void finish(TrainResult& r, const fs::path& out_dir) {
  fs::copy_file(out_dir / kLast, out_dir / kFinal, fs::copy_options::overwrite_existing);
  r.final_checkpoint = out_dir / kFinal;
  r.best_checkpoint = out_dir / kBest;
  r.loss_log = out_dir / kLossLog;
}

}  // namespace

void TrainCommon::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must lie in (0, 1]");
  if (dataset.empty()) throw ConfigError("dataset path is not set");
  if (out_dir.empty()) throw ConfigError("output directory is not set");
}

std::string shape_mae_config_json(const ShapeMaeConfig& cfg) { return shape_model_json(cfg).dump(); }
std::string unet_config_json(const UNetConfig& cfg) { return unet_model_json(cfg).dump(); }

std::vector<std::vector<double>> read_loss_log(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::vector<std::vector<double>> rows;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) {
      try {
        row.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw CorruptionError("bad value '" + field + "' in " + path.string());
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// --------------------------------------------------------- Shape MAE

TrainResult train_shape_mae(const ShapeMaeTrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  cfg.weights.validate();
  cfg.model.validate();
  const TrainingSet data = load_training_set(cfg);
  json train = common_json(cfg);
  train["alpha"] = cfg.weights.alpha;
  train["beta"] = cfg.weights.beta;
  const json config = {{"model", shape_model_json(cfg.model)}, {"train", train}, {"epochs", cfg.epochs}};
  write_text_atomic(cfg.out_dir / "config.json", config.dump(2) + "\n");

  ShapeMae<float> model(cfg.model);
  model.init(cfg.seed);
  nn::Adam<float> adam(model.params(), {.lr = cfg.lr});
  const int start = maybe_resume(cfg, config, model, adam);
  LossLog log(cfg.out_dir / kLossLog, {"epoch", "total", "intra", "inter", "reg"});
  double best = log.best_total();

  TrainResult result;
  result.epochs_completed = start;
  result.steps = adam.steps();
  const std::size_t n = data.subjects.size();
  Rng rng;
  for (int epoch = start + 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = epoch_order(n, cfg.seed, epoch, rng);
    ShapeMaeLoss sum;
    std::size_t batch_id = 0;
    for (std::size_t first = 0; first < n; first += cfg.batch, ++batch_id) {
      std::vector<const Subject*> members;
      for (std::size_t k = first; k < std::min(n, first + cfg.batch); ++k) {
        members.push_back(&data.subjects[order[k]]);
      }
      const auto batch = make_shape_mae_batch<float>(members);
      adam.zero_grad();
      ShapeMaeLoss loss;
      try {
        loss = model.accumulate_gradients(batch, cfg.weights);
      } catch (const NumericalError& e) {
        numerical_failure(e.what(), epoch, batch_id, cfg.lr, cfg.out_dir);
      }
      if (!std::isfinite(loss.total)) numerical_failure("non-finite loss", epoch, batch_id, cfg.lr, cfg.out_dir);
      adam.step();
      const double m = static_cast<double>(members.size());
      sum.total += loss.total * m;
      sum.intra += loss.intra * m;
      sum.inter += loss.inter * m;
      sum.reg += loss.reg * m;
      if (hooks.on_step) hooks.on_step(adam.steps(), loss.total);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.total = sum.total / n;
    rec.components = {sum.intra / n, sum.inter / n, sum.reg / n};
    rec.steps = adam.steps();
    log.append(rec);
    save_state(cfg.out_dir / kLast, ModelKind::kShapeMae, epoch, adam.steps(), rng.state(),
               config.dump(), model, adam);
    if (rec.total < best) {
      best = rec.total;
      fs::copy_file(cfg.out_dir / kLast, cfg.out_dir / kBest, fs::copy_options::overwrite_existing);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("shape_mae epoch {}/{} total {:.6f} intra {:.5f} inter {:.5f} reg {:.6f} ({:.1f}s)",
                 epoch, cfg.epochs, rec.total, rec.components[0], rec.components[1],
                 rec.components[2], secs);
    result.history.push_back(rec);
    result.epochs_completed = epoch;
    result.steps = adam.steps();
    if (hooks.on_epoch && hooks.on_epoch(rec)) {
      result.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  if (!fs::exists(cfg.out_dir / kLast)) throw ConfigError("no epochs to run");
  finish(result, cfg.out_dir);
  return result;
}

// --------------------------------------------------------- segmenter

TrainResult train_segmenter(const SegmenterTrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  cfg.model.validate();
  if (cfg.max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (cfg.model.fuse_enabled && cfg.priors_dir.empty()) {
    throw ConfigError("MV U-Net training needs a priors path (run encode-priors first)");
  }
  const TrainingSet data = load_training_set(cfg);
  const ModelKind kind = cfg.model.fuse_enabled ? ModelKind::kMvUnet : ModelKind::kUnet2d;

  std::vector<PriorCodes> priors;
  if (cfg.model.fuse_enabled) {
    std::vector<std::string> missing;
    for (const auto& id : data.ids) {
      const fs::path p = prior_path(cfg.priors_dir, id);
      if (!fs::exists(p)) {
        missing.push_back(id);
        continue;
      }
      priors.push_back(read_priors(p, static_cast<std::size_t>(cfg.model.code_channels) *
                                          cfg.model.bottleneck_grid() * cfg.model.bottleneck_grid()));
    }
    if (!missing.empty()) {
      std::string list;
      for (std::size_t k = 0; k < missing.size() && k < 10; ++k) list += (k ? ", " : "") + missing[k];
      if (missing.size() > 10) list += ", ...";
      throw NotFoundError("shape-prior cache " + cfg.priors_dir.string() + " lacks " +
                          std::to_string(missing.size()) + " training subjects: " + list);
    }
  }

  json train = common_json(cfg);
  const json config = {{"model", unet_model_json(cfg.model)},
                       {"train", train},
                       {"epochs", cfg.epochs},
                       {"max_steps", cfg.max_steps},
                       {"priors_dir", cfg.priors_dir.string()}};
  write_text_atomic(cfg.out_dir / "config.json", config.dump(2) + "\n");

  UNet<float> model(cfg.model);
  model.init(cfg.seed);
  nn::Adam<float> adam(model.params(), {.lr = cfg.lr});
  const int start = maybe_resume(cfg, config, model, adam);
  LossLog log(cfg.out_dir / kLossLog, {"epoch", "total", "cross_entropy"});
  double best = log.best_total();

  struct Sample {
    std::size_t subject;
    std::size_t slice;
  };
  std::vector<Sample> samples;
  for (std::size_t s = 0; s < data.subjects.size(); ++s) {
    for (std::size_t k = 0; k < data.subjects[s].sa_images.size(); ++k) samples.push_back({s, k});
  }
  const int size = cfg.model.image_size;
  const std::size_t plane = static_cast<std::size_t>(size) * size;

  TrainResult result;
  result.epochs_completed = start;
  result.steps = adam.steps();
  Rng rng;
  bool budget_spent = cfg.max_steps > 0 && adam.steps() >= cfg.max_steps;
  for (int epoch = start + 1; epoch <= cfg.epochs && !budget_spent; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = epoch_order(samples.size(), cfg.seed, epoch, rng);
    double sum = 0.0;
    std::size_t seen = 0, batch_id = 0;
    for (std::size_t first = 0; first < samples.size(); first += cfg.batch, ++batch_id) {
      const std::size_t end = std::min(samples.size(), first + cfg.batch);
      const int b = static_cast<int>(end - first);
      Tensor<float> x(b, 1, size, size);
      std::vector<std::uint8_t> labels(plane * b);
      std::vector<const PriorCodes*> codes;
      for (int k = 0; k < b; ++k) {
        const Sample& smp = samples[order[first + k]];
        const Subject& subj = data.subjects[smp.subject];
        const Image& img = subj.sa_images[smp.slice];
        const Mask& msk = subj.sa_masks[smp.slice];
        if (img.rows() != size || img.cols() != size) throw ShapeError("SA slice size differs from the model input");
        std::copy(img.values().begin(), img.values().end(), x.sample(k));
        std::copy(msk.values().begin(), msk.values().end(), labels.begin() + plane * k);
        if (cfg.model.fuse_enabled) codes.push_back(&priors[smp.subject]);
      }
      const Tensor<float> p =
          cfg.model.fuse_enabled ? make_prior_tensor<float>(codes, cfg.model) : Tensor<float>();
      adam.zero_grad();
      double loss = 0.0;
      try {
        const Tensor<float> logits = model.forward(x, p, Mode::kTrain);
        loss = nn::cross_entropy(logits, labels);
        if (!std::isfinite(loss)) numerical_failure("non-finite loss", epoch, batch_id, cfg.lr, cfg.out_dir);
        const std::vector<double> w(b, 1.0 / b);
        model.backward(nn::cross_entropy_grad(logits, labels, w));
      } catch (const NumericalError& e) {
        numerical_failure(e.what(), epoch, batch_id, cfg.lr, cfg.out_dir);
      }
      adam.step();
      sum += loss * b;
      seen += b;
      if (hooks.on_step) hooks.on_step(adam.steps(), loss);
      if (cfg.max_steps > 0 && adam.steps() >= cfg.max_steps) {
        budget_spent = true;
        break;
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.total = sum / seen;
    rec.components = {rec.total};
    rec.steps = adam.steps();
    log.append(rec);
    save_state(cfg.out_dir / kLast, kind, epoch, adam.steps(), rng.state(), config.dump(), model, adam);
    if (rec.total < best) {
      best = rec.total;
      fs::copy_file(cfg.out_dir / kLast, cfg.out_dir / kBest, fs::copy_options::overwrite_existing);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("{} epoch {}/{} cross-entropy {:.6f} steps {} ({:.1f}s)", to_string(kind), epoch,
                 cfg.epochs, rec.total, rec.steps, secs);
    result.history.push_back(rec);
    result.epochs_completed = epoch;
    result.steps = adam.steps();
    if (hooks.on_epoch && hooks.on_epoch(rec)) {
      result.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  if (budget_spent && result.epochs_completed < cfg.epochs) result.stopped_early = true;
  if (!fs::exists(cfg.out_dir / kLast)) throw ConfigError("no epochs to run");
  finish(result, cfg.out_dir);
  return result;
}

// ----------------------------------------------------------- loading

std::unique_ptr<ShapeMae<float>> load_shape_mae(const fs::path& checkpoint) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  if (ck.kind != ModelKind::kShapeMae) {
    throw ModelMismatch(checkpoint.string() + " holds a " + to_string(ck.kind) +
                        " model, expected shape_mae");
  }
  ShapeMaeConfig cfg;
  try {
    cfg = shape_model_from(json::parse(ck.config_json).at("model"));
  } catch (const json::exception& e) {
    throw CorruptionError("bad model config in " + checkpoint.string() + ": " + e.what());
  }
  auto model = std::make_unique<ShapeMae<float>>(cfg);
  auto params = model->params();
  import_weights(ck, params);
  return model;
}

std::unique_ptr<UNet<float>> load_segmenter(const fs::path& checkpoint) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  if (ck.kind != ModelKind::kMvUnet && ck.kind != ModelKind::kUnet2d) {
    throw ModelMismatch(checkpoint.string() + " holds a " + to_string(ck.kind) +
                        " model, expected mv_unet or unet2d");
  }
  UNetConfig cfg;
  try {
    cfg = unet_model_from(json::parse(ck.config_json).at("model"));
  } catch (const json::exception& e) {
    throw CorruptionError("bad model config in " + checkpoint.string() + ": " + e.what());
  }
  auto model = std::make_unique<UNet<float>>(cfg);
  auto params = model->params();
  import_weights(ck, params);
  return model;
}

SlicePredictor segmenter_predictor(UNet<float>& model, const fs::path& priors_dir) {
  return [&model, priors_dir](const Subject& s) {
    const UNetConfig& cfg = model.config();
    PriorCodes codes;
    if (cfg.fuse_enabled) {
      const fs::path p = prior_path(priors_dir, s.id);
      if (!fs::exists(p)) throw NotFoundError("no shape priors for " + s.id + " at " + p.string());
      codes = read_priors(p, static_cast<std::size_t>(cfg.code_channels) * cfg.bottleneck_grid() *
                                 cfg.bottleneck_grid());
    }
    const int size = cfg.image_size;
    const int n = static_cast<int>(s.sa_images.size());
    std::vector<Mask> out;
    constexpr int kChunk = 16;
    for (int first = 0; first < n; first += kChunk) {
      const int b = std::min(kChunk, n - first);
      Tensor<float> x(b, 1, size, size);
      for (int k = 0; k < b; ++k) {
        const Image& img = s.sa_images[first + k];
        if (img.rows() != size || img.cols() != size) throw ShapeError("SA slice size differs from the model input");
        std::copy(img.values().begin(), img.values().end(), x.sample(k));
      }
      Tensor<float> p;
      if (cfg.fuse_enabled) p = make_prior_tensor<float>(std::vector<const PriorCodes*>(b, &codes), cfg);
      const auto labels = nn::argmax_labels(model.forward(x, p, Mode::kEval));
      for (int k = 0; k < b; ++k) {
        Mask m(size, size);
        std::copy_n(labels.begin() + static_cast<std::ptrdiff_t>(k) * size * size, m.size(), m.data());
        out.push_back(std::move(m));
      }
    }
    return out;
  };
}

// -------------------------------------------------------- experiment

std::string cell_name(ModelKind model, double fraction, std::uint64_t seed) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s_f%g_s%llu", to_string(model), fraction,
                static_cast<unsigned long long>(seed));
  return buf;
}

namespace {

EvalReport run_cell(const ExperimentConfig& cfg, ModelKind model, double fraction,
                    std::uint64_t seed, const fs::path& dir) {
  if (model == ModelKind::kShapeMae) throw ConfigError("shape_mae is not a segmentation model");
  const bool mv = model == ModelKind::kMvUnet;
  const fs::path seg_dir = dir / "segmenter";
  const fs::path priors_dir = dir / "priors";
  if (!fs::exists(seg_dir / kFinal)) {
    if (mv) {
      ShapeMaeTrainConfig sm = cfg.shape_mae;
      sm.dataset = cfg.dataset;
      sm.out_dir = dir / "shape_mae";
      sm.seed = seed;
      sm.fraction = fraction;
      if (!fs::exists(sm.out_dir / kFinal)) train_shape_mae(sm);
      auto mae = load_shape_mae(sm.out_dir / kFinal);
      const auto summary = encode_priors(read_manifest(cfg.dataset), *mae, priors_dir);
      if (!summary.failures.empty()) {
        throw GenerationError("encoding priors failed for " + summary.failures[0].first + ": " +
                              summary.failures[0].second);
      }
    }
    SegmenterTrainConfig sc = cfg.segmenter;
    sc.dataset = cfg.dataset;
    sc.out_dir = seg_dir;
    sc.seed = seed;
    sc.fraction = fraction;
    sc.model.fuse_enabled = mv;
    sc.priors_dir = mv ? priors_dir : fs::path();
    train_segmenter(sc);
  }
  auto net = load_segmenter(seg_dir / kFinal);
  EvalReport report = evaluate(segmenter_predictor(*net, priors_dir), read_manifest(cfg.dataset),
                               Split::kTest, cell_name(model, fraction, seed));
  report.seeds = {seed};
  write_text_atomic(dir / "report.json", report.to_json());
  return report;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::function<void(const CellResult&)>& on_cell) {
  if (cfg.models.empty() || cfg.fractions.empty() || cfg.seeds.empty()) {
    throw ConfigError("experiment matrix is empty");
  }
  fs::create_directories(cfg.out_dir);
  ExperimentResult result;
  for (ModelKind model : cfg.models) {
    for (double fraction : cfg.fractions) {
      for (std::uint64_t seed : cfg.seeds) {
        CellResult cell;
        cell.model = model;
        cell.fraction = fraction;
        cell.seed = seed;
        cell.dir = cfg.out_dir / cell_name(model, fraction, seed);
        try {
          if (fs::exists(cell.dir / "report.json") && fs::exists(cell.dir / "segmenter" / kFinal)) {
            cell.report = EvalReport::from_json(read_text(cell.dir / "report.json"));
            cell.reused = true;
          } else {
            cell.report = run_cell(cfg, model, fraction, seed, cell.dir);
          }
          cell.ok = true;
        } catch (const std::exception& e) {
          cell.error = e.what();
          spdlog::error("cell {} failed: {}", cell.dir.filename().string(), cell.error);
        }
        if (on_cell) on_cell(cell);
        result.cells.push_back(std::move(cell));
      }
    }
  }

  std::vector<std::pair<std::string, EvalReport>> rows;
  json cells = json::array();
  for (ModelKind model : cfg.models) {
    for (double fraction : cfg.fractions) {
      std::vector<EvalReport> reports;
      for (const auto& c : result.cells) {
        if (c.ok && c.model == model && c.fraction == fraction) reports.push_back(c.report);
      }
      if (reports.empty()) continue;
      char name[64];
      std::snprintf(name, sizeof name, "%s %g%%", to_string(model), fraction * 100.0);
      rows.emplace_back(name, EvalReport::pooled(reports, name));
    }
  }
  for (const auto& c : result.cells) {
    cells.push_back({{"cell", c.dir.filename().string()}, {"model", to_string(c.model)},
                     {"fraction", c.fraction}, {"seed", c.seed}, {"ok", c.ok},
                     {"reused", c.reused}, {"error", c.error}});
  }
  result.table = render_table(rows);
  write_text_atomic(cfg.out_dir / "summary.txt", result.table);
  json pooled = json::array();
  for (const auto& [name, r] : rows) pooled.push_back(json::parse(r.to_json()));
  write_text_atomic(cfg.out_dir / "summary.json",
                    json({{"cells", cells}, {"pooled", pooled}}).dump(2) + "\n");
  return result;
}

}  // namespace mvseg
