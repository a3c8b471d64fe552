#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <iostream>
#include <optional>

#include "mvseg/config.hpp"
#include "mvseg/datastore.hpp"
#include "mvseg/error.hpp"
#include "mvseg/metrics.hpp"
#include "mvseg/mv_unet.hpp"
#include "mvseg/overlay.hpp"
#include "mvseg/phantom.hpp"
#include "mvseg/shape_mae.hpp"
#include "mvseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace mvseg;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  bool quiet = false;
};

RunConfig resolve(const Globals& g) {
  RunConfig c = g.config.empty() ? RunConfig{} : load_config(g.config);
  if (g.seed) c.set_seed(*g.seed);
  return c;
}

void snapshot(const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  write_text_atomic(dir / "resolved_config.ini", to_ini(c));
}

void artifacts(const std::vector<fs::path>& paths) {
  for (const auto& p : paths) std::printf("  wrote %s\n", p.string().c_str());
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split '" + s + "' (expected train or test)");
}

// ------------------------------------------------------------------ gen

struct GenArgs {
  std::optional<int> n;
  std::string out;
  std::optional<double> split_fraction;
  bool force = false;
};

int cmd_gen(const Globals& g, const GenArgs& a) {
  RunConfig c = resolve(g);
  if (a.n) c.n_subjects = *a.n;
  if (a.split_fraction) c.phantom.train_fraction = *a.split_fraction;
  c.phantom.overwrite = a.force;
  const DatasetManifest m = generate_dataset(c.n_subjects, c.seed, a.out, c.phantom);
  c.dataset = a.out;
  snapshot(c, a.out);
  std::printf("generated %zu subjects (%zu train / %zu test) in %s, config hash %s\n",
              m.subjects.size(), m.ids(Split::kTrain).size(), m.ids(Split::kTest).size(),
              a.out.c_str(), m.config_hash.c_str());
  artifacts({fs::path(a.out) / "manifest.json", fs::path(a.out) / "resolved_config.ini"});
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string model;
  std::string dataset;
  std::string out;
  std::string priors;
  std::optional<double> fraction;
  std::optional<int> epochs;
  std::optional<int> batch;
  std::optional<double> lr;
  std::optional<std::int64_t> max_steps;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  const ModelKind kind = parse_model_kind(a.model);
  RunConfig c = resolve(g);
  if (!a.dataset.empty()) c.dataset = a.dataset;
  if (!a.out.empty()) c.out_dir = a.out;
  if (a.fraction) c.set_fraction(*a.fraction);
  if (c.out_dir.empty()) throw ConfigError("no output directory (--out or [trainer] out)");
  TrainResult r;
  if (kind == ModelKind::kShapeMae) {
    ShapeMaeTrainConfig t = c.shape_mae;
    t.dataset = c.dataset;
    t.out_dir = c.out_dir;
    if (a.epochs) t.epochs = *a.epochs;
    if (a.batch) t.batch = *a.batch;
    if (a.lr) t.lr = *a.lr;
    c.shape_mae = t;
    snapshot(c, c.out_dir);
    r = train_shape_mae(t);
  } else {
    SegmenterTrainConfig t = c.segmenter;
    t.dataset = c.dataset;
    t.out_dir = c.out_dir;
    t.model.fuse_enabled = kind == ModelKind::kMvUnet;
    if (!a.priors.empty()) t.priors_dir = a.priors;
    if (a.epochs) t.epochs = *a.epochs;
    if (a.batch) t.batch = *a.batch;
    if (a.lr) t.lr = *a.lr;
    if (a.max_steps) t.max_steps = *a.max_steps;
    if (t.model.fuse_enabled && t.priors_dir.empty()) {
      throw ConfigError("mv_unet needs a shape-prior cache: pass --priors <dir> (from encode-priors)");
    }
    if (t.model.fuse_enabled && !fs::is_directory(t.priors_dir)) {
      throw NotFoundError("shape-prior cache not found: " + t.priors_dir.string());
    }
    c.segmenter = t;
    snapshot(c, c.out_dir);
    r = train_segmenter(t);
  }
  std::printf("trained %s: %d epochs, %lld optimizer steps%s\n", to_string(kind), r.epochs_completed,
              static_cast<long long>(r.steps), r.stopped_early ? " (stopped early)" : "");
  artifacts({r.final_checkpoint, r.best_checkpoint, r.loss_log});
  return 0;
}

// -------------------------------------------------------- encode-priors

int cmd_encode(const Globals& g, const std::string& ckpt, const std::string& data,
               const std::string& out) {
  RunConfig c = resolve(g);
  c.dataset = data;
  auto model = load_shape_mae(ckpt);
  const DatasetManifest m = read_manifest(data);
  const EncodeSummary s = encode_priors(m, *model, out);
  snapshot(c, out);
  std::printf("encoded %d of %zu subjects into %s\n", s.written, m.subjects.size(), out.c_str());
  for (const auto& [id, msg] : s.failures) std::printf("  failed %s: %s\n", id.c_str(), msg.c_str());
  return s.failures.empty() ? 0 : 1;
}

// ----------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  std::string priors;
  std::string out;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  RunConfig c = resolve(g);
  c.dataset = a.data;
  auto model = load_segmenter(a.ckpt);
  if (model->config().fuse_enabled && a.priors.empty()) {
    throw ConfigError("mv_unet checkpoint needs --priors <dir>");
  }
  const DatasetManifest m = read_manifest(a.data);
  const EvalReport r = evaluate(segmenter_predictor(*model, a.priors), m, parse_split(a.split),
                                fs::path(a.ckpt).stem().string());
  std::printf("%s", render_table({{model->config().fuse_enabled ? "mv_unet" : "unet2d", r}}).c_str());
  std::printf("%d slices scored\n", r.slices());
  for (const auto& [id, msg] : r.failures) std::printf("  excluded %s: %s\n", id.c_str(), msg.c_str());
  if (!a.out.empty()) {
    snapshot(c, a.out);
    write_text_atomic(fs::path(a.out) / "report.json", r.to_json());
    artifacts({fs::path(a.out) / "report.json"});
  }
  return 0;
}

// --------------------------------------------------------------- params

int cmd_params(const Globals& g, const std::string& model, std::optional<int> base,
               const std::string& out) {
  const ModelKind kind = parse_model_kind(model);
  RunConfig c = resolve(g);
  std::size_t n = 0;
  if (kind == ModelKind::kShapeMae) {
    ShapeMae<float> m(c.shape_mae.model);
    n = m.count_conv_weights();
  } else {
    UNetConfig u = c.segmenter.model;
    if (base) u.base_filters = *base;
    u.fuse_enabled = kind == ModelKind::kMvUnet;
    n = count_conv_weights(u);
    if (u.fuse_enabled) std::printf("fuse block conv weights: %zu\n", fuse_block_conv_weights(u));
  }
  std::printf("%s conv weights: %zu (%.3fM)\n", to_string(kind), n, n / 1e6);
  if (!out.empty()) snapshot(c, out);
  return 0;
}

// ------------------------------------------------------------- overlays

struct OverlayArgs {
  std::string ckpt;
  std::string data;
  std::string priors;
  std::string out;
  std::string split = "test";
  int n = 3;
};

int cmd_overlays(const Globals& g, const OverlayArgs& a) {
  if (a.n < 1) throw ConfigError("--n must be >= 1");
  RunConfig c = resolve(g);
  c.dataset = a.data;
  auto model = load_segmenter(a.ckpt);
  if (model->config().fuse_enabled && a.priors.empty()) {
    throw ConfigError("mv_unet checkpoint needs --priors <dir>");
  }
  const DatasetManifest m = read_manifest(a.data);
  const auto ids = m.ids(parse_split(a.split));
  if (ids.size() < static_cast<std::size_t>(a.n)) {
    throw ConfigError("split has only " + std::to_string(ids.size()) + " subjects");
  }
  fs::create_directories(a.out);
  const SlicePredictor predict = segmenter_predictor(*model, a.priors);
  std::vector<fs::path> written;
  for (int k = 0; k < a.n; ++k) {
    const Subject s = read_subject(m.subject_dir(ids[k]));
    const auto regions = stratify_slices(s.sa_masks);
    const auto pred = predict(s);
    for (SliceRegion r : kRegions) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < regions.size(); ++i) {
        if (regions[i] == r) idx.push_back(i);
      }
      if (idx.empty()) continue;
      const std::size_t i = idx[idx.size() / 2];
      const fs::path p = fs::path(a.out) / (s.id + "_" + to_string(r) + ".png");
      write_png(p, render_overlay(s.sa_images[i], s.sa_masks[i], pred[i]));
      written.push_back(p);
    }
  }
  snapshot(c, a.out);
  std::printf("wrote %zu overlays (green: ground truth, red: prediction, yellow: both)\n",
              written.size());
  artifacts(written);
  return 0;
}

// ----------------------------------------------------------- experiment

struct ExperimentArgs {
  std::string dataset;
  std::string out;
  std::vector<std::string> models{"mv_unet", "unet2d"};
  std::vector<double> fractions{0.1};
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

int cmd_experiment(const Globals& g, const ExperimentArgs& a) {
  RunConfig c = resolve(g);
  ExperimentConfig e;
  e.dataset = a.dataset.empty() ? c.dataset : fs::path(a.dataset);
  e.out_dir = a.out.empty() ? c.out_dir : fs::path(a.out);
  if (e.out_dir.empty()) throw ConfigError("no output directory (--out or [trainer] out)");
  e.models.clear();
  for (const auto& m : a.models) e.models.push_back(parse_model_kind(m));
  e.fractions = a.fractions;
  e.seeds = a.seeds;
  if (g.seed) e.seeds = {*g.seed};
  e.shape_mae = c.shape_mae;
  e.segmenter = c.segmenter;
  snapshot(c, e.out_dir);
  const ExperimentResult r = run_experiment(e, [](const CellResult& cell) {
    std::printf("%s %s%s\n", cell.dir.filename().string().c_str(), cell.ok ? "ok" : "FAILED",
                cell.reused ? " (reused)" : "");
  });
  std::printf("%s", r.table.c_str());
  int failed = 0;
  for (const auto& cell : r.cells) failed += !cell.ok;
  artifacts({e.out_dir / "summary.txt", e.out_dir / "summary.json"});
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view cardiac MR segmentation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Global seed; overrides every seed in the config");
  app.add_option("--config", g.config, "INI config file")->check(CLI::ExistingFile);
  app.add_flag("-q,--quiet", g.quiet, "Only log warnings and errors");

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen", "Generate a synthetic phantom dataset");
  c_gen->add_option("--n", gen.n, "Number of subjects (>= 5)");
  c_gen->add_option("--out", gen.out, "Output dataset directory")->required();
  c_gen->add_option("--split-fraction", gen.split_fraction, "Fraction of subjects in the training split");
  c_gen->add_flag("--force", gen.force, "Replace a nonempty output directory");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train shape_mae, mv_unet or unet2d");
  c_train->add_option("--model", train.model, "shape_mae | mv_unet | unet2d")->required();
  c_train->add_option("--data", train.dataset, "Dataset directory");
  c_train->add_option("--out", train.out, "Run directory");
  c_train->add_option("--priors", train.priors, "Shape-prior cache (mv_unet)");
  c_train->add_option("--fraction", train.fraction, "Fraction of the training split to use");
  c_train->add_option("--epochs", train.epochs, "Epochs");
  c_train->add_option("--batch", train.batch, "Batch size");
  c_train->add_option("--lr", train.lr, "Learning rate");
  c_train->add_option("--max-steps", train.max_steps, "Stop after this many optimizer steps (segmenters)");

  std::string enc_ckpt, enc_data, enc_out;
  auto* c_enc = app.add_subcommand("encode-priors", "Cache shape codes of every subject");
  c_enc->add_option("--ckpt", enc_ckpt, "Shape MAE checkpoint")->required();
  c_enc->add_option("--data", enc_data, "Dataset directory")->required();
  c_enc->add_option("--out", enc_out, "Prior cache directory")->required();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Stratified Dice / Hausdorff evaluation");
  c_eval->add_option("--model-ckpt", ev.ckpt, "Segmenter checkpoint")->required();
  c_eval->add_option("--data", ev.data, "Dataset directory")->required();
  c_eval->add_option("--split", ev.split, "train | test")->capture_default_str();
  c_eval->add_option("--priors", ev.priors, "Shape-prior cache (mv_unet)");
  c_eval->add_option("--out", ev.out, "Directory for report.json");

  std::string p_model, p_out;
  std::optional<int> p_base;
  auto* c_params = app.add_subcommand("params", "Count convolution weights");
  c_params->add_option("--model", p_model, "shape_mae | mv_unet | unet2d")->required();
  c_params->add_option("--base-filters", p_base, "U-Net base filter count");
  c_params->add_option("--out", p_out, "Directory for the resolved config");

  OverlayArgs ov;
  auto* c_ov = app.add_subcommand("overlays", "Write contour overlays for apex / mid / base slices");
  c_ov->add_option("--model-ckpt", ov.ckpt, "Segmenter checkpoint")->required();
  c_ov->add_option("--data", ov.data, "Dataset directory")->required();
  c_ov->add_option("--priors", ov.priors, "Shape-prior cache (mv_unet)");
  c_ov->add_option("--out", ov.out, "Output directory")->required();
  c_ov->add_option("--split", ov.split, "train | test")->capture_default_str();
  c_ov->add_option("--n", ov.n, "Number of subjects")->capture_default_str();

  ExperimentArgs ex;
  auto* c_ex = app.add_subcommand("experiment", "Train and evaluate a model x fraction x seed matrix");
  c_ex->add_option("--data", ex.dataset, "Dataset directory");
  c_ex->add_option("--out", ex.out, "Experiment directory");
  c_ex->add_option("--models", ex.models, "Segmenter kinds")->delimiter(',')->capture_default_str();
  c_ex->add_option("--fractions", ex.fractions, "Training fractions")->delimiter(',')->capture_default_str();
  c_ex->add_option("--seeds", ex.seeds, "Seeds")->delimiter(',')->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  spdlog::set_level(g.quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*c_gen) return cmd_gen(g, gen);
    if (*c_train) return cmd_train(g, train);
    if (*c_enc) return cmd_encode(g, enc_ckpt, enc_data, enc_out);
    if (*c_eval) return cmd_eval(g, ev);
    if (*c_params) return cmd_params(g, p_model, p_base, p_out);
    if (*c_ov) return cmd_overlays(g, ov);
    if (*c_ex) return cmd_experiment(g, ex);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  }
  return 2;
}
