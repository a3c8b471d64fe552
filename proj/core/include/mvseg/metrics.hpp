#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mvseg/datastore.hpp"
#include "mvseg/geometry.hpp"
#include "mvseg/grid.hpp"

namespace mvseg {

struct PixelSpacing {
  double row = 1.8;
  double col = 1.8;
};

// 2|a & b| / (|a| + |b|); 1 when both are empty.
double dice(const Mask& a, const Mask& b);

// Symmetric Hausdorff distance (mm) between the foreground pixel centers.
// Both empty -> 0; exactly one empty -> the image diagonal.
double hausdorff(const Mask& a, const Mask& b, PixelSpacing spacing);

double image_diagonal_mm(int rows, int cols, PixelSpacing spacing);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  int n = 0;
};

Summary summarize(const std::vector<double>& values);

inline constexpr std::array<SliceRegion, 3> kRegions = {SliceRegion::kApex, SliceRegion::kMid,
                                                       SliceRegion::kBase};

struct RegionScores {
  std::vector<double> dice;
  std::vector<double> hd;
};

struct EvalReport {
  std::string model;
  std::string split;
  std::vector<std::uint64_t> seeds;
  std::array<RegionScores, 3> scores;  // apex, mid, base
  std::vector<std::pair<std::string, std::string>> failures;  // id, message

  Summary dice(SliceRegion r) const;
  Summary hd(SliceRegion r) const;
  int slices() const;

  // Pools the per-slice scores of several reports (e.g. over seeds).
  static EvalReport pooled(const std::vector<EvalReport>& reports, const std::string& model);

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

// Per-subject prediction of every SA slice, apex to base.
using SlicePredictor = std::function<std::vector<Mask>(const Subject&)>;

// Scores every myocardium-bearing SA slice of the split's subjects by
// region. Subjects whose prediction throws mvseg::Error are recorded in
// `failures` and skipped.
EvalReport evaluate(const SlicePredictor& predictor, const DatasetManifest& manifest, Split split,
                    const std::string& model_id);

// Table with Dice and HD columns for apex / mid / base, one row per entry.
std::string render_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace mvseg
