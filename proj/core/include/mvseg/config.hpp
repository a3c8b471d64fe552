#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mvseg/phantom.hpp"
#include "mvseg/trainer.hpp"

namespace mvseg {

// Full pipeline configuration, read from an INI file with the sections
// [phantom], [trainer], [shape_mae] and [segmenter]. Unknown sections or
// keys are errors.
struct RunConfig {
  // [phantom]
  int n_subjects = 100;
  DatasetOptions phantom;
  // [trainer]: shared defaults copied into both model sections.
  fs::path dataset;
  fs::path out_dir;
  std::uint64_t seed = 0;
  double fraction = 1.0;
  ShapeMaeTrainConfig shape_mae;
  SegmenterTrainConfig segmenter;

  // Overrides every seed in the configuration.
  void set_seed(std::uint64_t s);
  void set_fraction(double f);
};

RunConfig parse_config(const std::string& ini_text);
RunConfig load_config(const fs::path& path);
// Canonical INI text; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const RunConfig& c);

}  // namespace mvseg
