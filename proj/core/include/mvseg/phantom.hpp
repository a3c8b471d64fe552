#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvseg/geometry.hpp"
#include "mvseg/grid.hpp"

namespace mvseg {

struct DatasetManifest;

inline constexpr int kNumSourceViews = 4;  // LA1, LA2, LA3, Mid-V
inline constexpr int kNumTargetViews = 6;  // the four sources + apical SA + basal SA
inline constexpr std::array<const char*, kNumTargetViews> kViewNames = {
    "LA1", "LA2", "LA3", "Mid-V", "Apical", "Basal"};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct IntensityModel {
  double myocardium = 0.35;
  double blood_pool = 0.85;
  double background = 0.15;
  double noise_sigma = 0.05;

  friend bool operator==(const IntensityModel&, const IntensityModel&) = default;
};

enum class Tissue { kBackground, kBloodPool, kMyocardium };

// Left-ventricular myocardium modeled as the shell between two coaxial
// ellipsoids, truncated at the base. In the local frame the long axis is +z
// (apex at negative z) and both ellipsoids are centered at the origin.
struct AnatomyParams {
  std::array<double, 3> endo_radii{};      // a, b (short axes) and c (long semi-axis), mm
  std::array<double, 2> wall_thickness{};  // apex, base; mm
  double lv_length = 0.0;                  // epicardial apex to truncation plane, mm
  double base_truncation = 0.0;            // fraction of the full long axis removed at the base
  std::array<double, 3> rotation{};        // z-y-x Euler angles, radians
  std::array<double, 3> translation{};     // mm
  IntensityModel intensity;

  Eigen::Matrix3d rotation_matrix() const;
  Vec3 long_axis() const;  // unit, apex -> base, world frame
  Vec3 to_local(const Vec3& world) const;
  Vec3 to_world(const Vec3& local) const;

  std::array<double, 3> epi_radii() const;
  double apex_z() const;  // local z of the epicardial apex
  double base_z() const;  // local z of the truncation plane

  Tissue classify(const Vec3& world) const;
  // Closed-form myocardium cross-section area (mm^2) of the plane z = const.
  double myocardium_area(double z) const;

  // Throws ConfigError naming the first violated invariant.
  void validate() const;

  friend bool operator==(const AnatomyParams&, const AnatomyParams&) = default;
};

struct ParamRanges {
  Interval endo_a{22.0, 28.0};
  Interval endo_b{20.0, 26.0};
  Interval lv_length{80.0, 100.0};
  Interval wall_apex{4.0, 6.5};
  Interval wall_base{7.0, 10.0};
  Interval base_truncation{0.08, 0.16};
  Interval rotation{-0.4, 0.4};
  Interval translation{-20.0, 20.0};
  Interval myocardium{0.30, 0.40};
  Interval blood_pool{0.75, 0.90};
  Interval background{0.10, 0.20};
  Interval noise_sigma{0.03, 0.06};

  void validate() const;
};

struct ViewConfig {
  int image_size = 128;
  double pixel_spacing = 1.8;
  double slice_spacing = 10.0;
  int acquisition_size = 160;  // SA field of view before the ROI crop
  double stack_margin = 10.0;  // coverage beyond apex and base, mm
  std::array<double, 3> la_angles_deg{0.0, 60.0, 120.0};
  Interval basal_gap{2.0, 8.0};     // truncation plane to the most basal SA slice, mm
  double apex_clearance = 2.0;      // min distance of any SA slice above the apex tip, mm

  void validate() const;
};

AnatomyParams sample_anatomy(std::uint64_t seed, const ParamRanges& ranges);

struct RasterizedView {
  Image image;
  Mask mask;
};

// Mask pixel = 1 iff its center lies in the myocardium; image = tissue mean
// plus Gaussian noise, clipped to [0, 1]. Any valid plane geometry is
// accepted; planes missing the anatomy give an empty mask.
RasterizedView rasterize_view(const AnatomyParams& anatomy, const ViewPlane& plane,
                              std::uint64_t noise_seed);

struct TargetSlices {
  int apical = 0;
  int mid = 0;
  int basal = 0;
  friend bool operator==(const TargetSlices&, const TargetSlices&) = default;
};

// 25th / 50th / 75th percentile positions (rounded down) of the
// myocardium-bearing slice indices.
TargetSlices select_target_slices(const std::vector<int>& bearing_indices);

struct Subject {
  std::string id;
  std::uint64_t seed = 0;
  AnatomyParams anatomy;
  std::array<double, 3> spacing{1.8, 1.8, 10.0};

  std::array<Image, 3> la_images;
  std::array<Mask, 3> la_masks;
  std::array<ViewPlane, 3> la_planes;

  std::vector<Image> sa_images;  // apex -> base
  std::vector<Mask> sa_masks;
  std::vector<ViewPlane> sa_planes;
  TargetSlices targets;

  // View index i in [0, 4): LA1, LA2, LA3, Mid-V.
  const Image& source_view(int i) const;
  // View index j in [0, 6): LA1, LA2, LA3, Mid-V, apical SA, basal SA.
  const Mask& target_mask(int j) const;
  const ViewPlane& target_plane(int j) const;

  std::vector<int> bearing_slices() const;
};

Subject generate_subject(const AnatomyParams& anatomy, const ViewConfig& view, std::uint64_t seed,
                         const std::string& id = "subject");

struct DatasetOptions {
  ParamRanges ranges;
  ViewConfig view;
  double train_fraction = 0.8;
  bool overwrite = false;
};

// Canonical text of every generator setting; its hash goes into the manifest.
std::string canonical_generator_config(const DatasetOptions& options);

inline constexpr int kMinDatasetSubjects = 5;

DatasetManifest generate_dataset(int n_subjects, std::uint64_t seed,
                                 const std::filesystem::path& out_dir,
                                 const DatasetOptions& options);

}  // namespace mvseg
