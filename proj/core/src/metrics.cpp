#include "mvseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <nlohmann/json.hpp>

#include "mvseg/error.hpp"

namespace mvseg {

using nlohmann::json;

namespace {

void check_same(const Mask& a, const Mask& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": masks differ in shape (" + std::to_string(a.rows()) +
                     "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

std::vector<std::array<double, 2>> foreground_points(const Mask& m, PixelSpacing s) {
  std::vector<std::array<double, 2>> pts;
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      if (m(r, c)) pts.push_back({r * s.row, c * s.col});
    }
  }
  return pts;
}

// max over a of min over b of |a - b|^2, with early exit once a point's
// running minimum falls below the current maximum.
double directed_sq(const std::vector<std::array<double, 2>>& a,
                   const std::vector<std::array<double, 2>>& b) {
  double cmax = 0.0;
  for (const auto& p : a) {
    double cmin = std::numeric_limits<double>::infinity();
    for (const auto& q : b) {
      const double dr = p[0] - q[0], dc = p[1] - q[1];
      const double d = dr * dr + dc * dc;
      if (d < cmin) {
        cmin = d;
        if (cmin <= cmax) break;
      }
    }
    cmax = std::max(cmax, cmin);
  }
  return cmax;
}

int region_index(SliceRegion r) {
  switch (r) {
    case SliceRegion::kApex: return 0;
    case SliceRegion::kMid: return 1;
    case SliceRegion::kBase: return 2;
    default: return -1;
  }
}

std::string cell(const Summary& s, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f (%.*f)", digits, s.mean, digits, s.std);
  return buf;
}

}  // namespace

double dice(const Mask& a, const Mask& b) {
  check_same(a, b, "dice");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const bool x = a.data()[k] != 0, y = b.data()[k] != 0;
    na += x;
    nb += y;
    inter += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double image_diagonal_mm(int rows, int cols, PixelSpacing s) {
  return std::hypot(rows * s.row, cols * s.col);
}

double hausdorff(const Mask& a, const Mask& b, PixelSpacing spacing) {
  check_same(a, b, "hausdorff");
  if (!(spacing.row > 0.0) || !(spacing.col > 0.0)) throw ConfigError("hausdorff: spacing must be positive");
  const auto pa = foreground_points(a, spacing);
  const auto pb = foreground_points(b, spacing);
  if (pa.empty() && pb.empty()) return 0.0;
  if (pa.empty() || pb.empty()) return image_diagonal_mm(a.rows(), a.cols(), spacing);
  return std::sqrt(std::max(directed_sq(pa, pb), directed_sq(pb, pa)));
}

Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.n = static_cast<int>(v.size());
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / s.n;
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / s.n);
  return s;
}

Summary EvalReport::dice(SliceRegion r) const { return summarize(scores.at(region_index(r)).dice); }
Summary EvalReport::hd(SliceRegion r) const { return summarize(scores.at(region_index(r)).hd); }

int EvalReport::slices() const {
  int n = 0;
  for (const auto& s : scores) n += static_cast<int>(s.dice.size());
  return n;
}

EvalReport EvalReport::pooled(const std::vector<EvalReport>& reports, const std::string& model) {
  EvalReport out;
  out.model = model;
  for (const auto& r : reports) {
    if (out.split.empty()) out.split = r.split;
    out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
    for (int k = 0; k < 3; ++k) {
      auto& d = out.scores[k];
      d.dice.insert(d.dice.end(), r.scores[k].dice.begin(), r.scores[k].dice.end());
      d.hd.insert(d.hd.end(), r.scores[k].hd.begin(), r.scores[k].hd.end());
    }
    out.failures.insert(out.failures.end(), r.failures.begin(), r.failures.end());
  }
  return out;
}

std::string EvalReport::to_json() const {
  json regions = json::object();
  for (SliceRegion r : kRegions) {
    const auto& sc = scores[region_index(r)];
    const Summary d = dice(r), h = hd(r);
    regions[to_string(r)] = {
        {"dice", {{"mean", d.mean}, {"std", d.std}, {"n", d.n}}},
        {"hd_mm", {{"mean", h.mean}, {"std", h.std}, {"n", h.n}}},
        {"dice_values", sc.dice},
        {"hd_values", sc.hd}};
  }
  json fails = json::array();
  for (const auto& [id, msg] : failures) fails.push_back({{"id", id}, {"error", msg}});
  const json j = {{"model", model}, {"split", split}, {"seeds", seeds},
                  {"regions", regions}, {"failures", fails}};
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  EvalReport r;
  try {
    const json j = json::parse(text);
    r.model = j.at("model").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (SliceRegion reg : kRegions) {
      const json& x = j.at("regions").at(to_string(reg));
      r.scores[region_index(reg)].dice = x.at("dice_values").get<std::vector<double>>();
      r.scores[region_index(reg)].hd = x.at("hd_values").get<std::vector<double>>();
    }
    for (const auto& f : j.at("failures")) {
      r.failures.emplace_back(f.at("id").get<std::string>(), f.at("error").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

EvalReport evaluate(const SlicePredictor& predictor, const DatasetManifest& manifest, Split split,
                    const std::string& model_id) {
  EvalReport report;
  report.model = model_id;
  report.split = to_string(split);
  const PixelSpacing spacing{manifest.spacing[0], manifest.spacing[1]};
  for (const auto& id : manifest.ids(split)) {
    try {
      const Subject s = read_subject(manifest.subject_dir(id));
      const auto regions = stratify_slices(s.sa_masks);
      const std::vector<Mask> pred = predictor(s);
      if (pred.size() != s.sa_masks.size()) {
        throw ShapeError("predictor returned " + std::to_string(pred.size()) + " slices for " +
                         std::to_string(s.sa_masks.size()));
      }
      RegionScores local[3];
      for (std::size_t k = 0; k < pred.size(); ++k) {
        const int ri = region_index(regions[k]);
        if (ri < 0) continue;
        local[ri].dice.push_back(dice(pred[k], s.sa_masks[k]));
        local[ri].hd.push_back(hausdorff(pred[k], s.sa_masks[k], spacing));
      }
      for (int k = 0; k < 3; ++k) {
        auto& d = report.scores[k];
        d.dice.insert(d.dice.end(), local[k].dice.begin(), local[k].dice.end());
        d.hd.insert(d.hd.end(), local[k].hd.begin(), local[k].hd.end());
      }
    } catch (const Error& e) {
      report.failures.emplace_back(id, e.what());
    }
  }
  return report;
}

std::string render_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::size_t name_w = 5;
  for (const auto& [name, r] : rows) name_w = std::max(name_w, name.size());
  const int col_w = 17;
  std::string out;
  char buf[256];
  auto line = [&](const std::string& name, const std::array<std::string, 6>& cells) {
    std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(name_w), name.c_str());
    out += buf;
    for (int k = 0; k < 6; ++k) {
      std::snprintf(buf, sizeof buf, " %s%*s", k == 3 ? "| " : "", col_w, cells[k].c_str());
      out += buf;
    }
    out += '\n';
  };
  std::snprintf(buf, sizeof buf, "%-*s %*s %*s\n", static_cast<int>(name_w), "",
                3 * (col_w + 1) - 1, "Dice", 3 * (col_w + 1) + 1, "HD (mm)");
  out += buf;
  line("Model", {"Apex", "Middle", "Base", "Apex", "Middle", "Base"});
  out += std::string(name_w + 6 * (col_w + 1) + 2, '-') + '\n';
  for (const auto& [name, r] : rows) {
    std::array<std::string, 6> cells;
    for (int k = 0; k < 3; ++k) {
      cells[k] = cell(r.dice(kRegions[k]), 3);
      cells[k + 3] = cell(r.hd(kRegions[k]), 2);
    }
    line(name, cells);
  }
  return out;
}

}  // namespace mvseg
