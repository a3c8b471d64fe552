#include "mvseg/phantom.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "mvseg/datastore.hpp"
#include "mvseg/error.hpp"
#include "mvseg/rng.hpp"

namespace mvseg {
namespace {

constexpr double kMinWall = 1.0;
constexpr double kMinBearingSlices = 6;
constexpr double kReferenceSliceSpacing = 10.0;
// Six slices at 10 mm need 60 mm of coverage plus room for the basal gap
// and apex clearance.
constexpr double kMinLvLength = 70.0;

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

void check_interval(const Interval& r, const std::string& name) {
  require(std::isfinite(r.lo) && std::isfinite(r.hi), name + " range must be finite");
  require(r.lo <= r.hi, name + " range is empty (lo > hi)");
}

// Full epicardial long semi-axis for a given length / truncation.
double epi_long_semi_axis(double lv_length, double truncation) {
  return lv_length / (2.0 * (1.0 - truncation));
}

bool unimodal_profile(double a, double b, double c, double t_apex, double t_base) {
  const double big_a = a + t_base, big_b = b + t_base, big_c = c + t_apex;
  return big_a * big_b / (big_c * big_c) > a * b / (c * c);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ------------------------------------------------------------ anatomy

Eigen::Matrix3d AnatomyParams::rotation_matrix() const {
  return (Eigen::AngleAxisd(rotation[0], Vec3::UnitZ()) *
          Eigen::AngleAxisd(rotation[1], Vec3::UnitY()) *
          Eigen::AngleAxisd(rotation[2], Vec3::UnitX()))
      .toRotationMatrix();
}

Vec3 AnatomyParams::long_axis() const { return rotation_matrix().col(2); }

Vec3 AnatomyParams::to_local(const Vec3& world) const {
  return rotation_matrix().transpose() * (world - Vec3(translation[0], translation[1], translation[2]));
}

Vec3 AnatomyParams::to_world(const Vec3& local) const {
  return rotation_matrix() * local + Vec3(translation[0], translation[1], translation[2]);
}

std::array<double, 3> AnatomyParams::epi_radii() const {
  return {endo_radii[0] + wall_thickness[1], endo_radii[1] + wall_thickness[1],
          endo_radii[2] + wall_thickness[0]};
}

double AnatomyParams::apex_z() const { return -epi_radii()[2]; }

double AnatomyParams::base_z() const { return epi_radii()[2] * (1.0 - 2.0 * base_truncation); }

Tissue AnatomyParams::classify(const Vec3& world) const {
  const Vec3 p = to_local(world);
  if (p.z() > base_z()) return Tissue::kBackground;
  const auto epi = epi_radii();
  const double qe = (p.x() / epi[0]) * (p.x() / epi[0]) + (p.y() / epi[1]) * (p.y() / epi[1]) +
                    (p.z() / epi[2]) * (p.z() / epi[2]);
  if (qe > 1.0) return Tissue::kBackground;
  const auto& en = endo_radii;
  const double qi = (p.x() / en[0]) * (p.x() / en[0]) + (p.y() / en[1]) * (p.y() / en[1]) +
                    (p.z() / en[2]) * (p.z() / en[2]);
  return qi < 1.0 ? Tissue::kBloodPool : Tissue::kMyocardium;
}

double AnatomyParams::myocardium_area(double z) const {
  const auto epi = epi_radii();
  if (z > base_z() || std::abs(z) >= epi[2]) return 0.0;
  double area = std::numbers::pi * epi[0] * epi[1] * (1.0 - z * z / (epi[2] * epi[2]));
  const double c = endo_radii[2];
  if (std::abs(z) < c) {
    area -= std::numbers::pi * endo_radii[0] * endo_radii[1] * (1.0 - z * z / (c * c));
  }
  return area;
}

void AnatomyParams::validate() const {
  for (double v : {endo_radii[0], endo_radii[1], endo_radii[2], wall_thickness[0],
                   wall_thickness[1], lv_length, base_truncation, rotation[0], rotation[1],
                   rotation[2], translation[0], translation[1], translation[2],
                   intensity.myocardium, intensity.blood_pool, intensity.background,
                   intensity.noise_sigma}) {
    if (!std::isfinite(v)) throw InputError("anatomy contains a non-finite value");
  }
  require(endo_radii[0] > 0 && endo_radii[1] > 0 && endo_radii[2] > 0,
          "endo_radii must be positive");
  require(wall_thickness[0] > kMinWall && wall_thickness[1] > kMinWall,
          "wall_thickness must exceed 1 mm everywhere");
  require(base_truncation >= 0.05 && base_truncation <= 0.2,
          "base_truncation must lie in [0.05, 0.2]");
  const double expected = 2.0 * epi_radii()[2] * (1.0 - base_truncation);
  require(std::abs(expected - lv_length) <= 1e-9 * std::max(1.0, lv_length),
          "lv_length must equal the truncated epicardial long-axis length");
  require(lv_length >= kMinLvLength,
          "lv_length must keep >= 6 myocardium-bearing SA slices at 10 mm spacing (>= 70 mm)");
  require(unimodal_profile(endo_radii[0], endo_radii[1], endo_radii[2], wall_thickness[0],
                           wall_thickness[1]),
          "wall profile must give a unimodal myocardium area along the long axis");
  for (double v : {intensity.myocardium, intensity.blood_pool, intensity.background}) {
    require(v >= 0.0 && v <= 1.0, "tissue intensities must lie in [0, 1]");
  }
  require(intensity.noise_sigma >= 0.0, "noise sigma must be non-negative");
}

void ParamRanges::validate() const {
  const std::pair<const Interval*, const char*> all[] = {
      {&endo_a, "endo_a"},         {&endo_b, "endo_b"},       {&lv_length, "lv_length"},
      {&wall_apex, "wall_apex"},   {&wall_base, "wall_base"}, {&base_truncation, "base_truncation"},
      {&rotation, "rotation"},     {&translation, "translation"}, {&myocardium, "myocardium"},
      {&blood_pool, "blood_pool"}, {&background, "background"},   {&noise_sigma, "noise_sigma"}};
  for (const auto& [r, name] : all) check_interval(*r, name);
  require(endo_a.lo > 0 && endo_b.lo > 0, "endo_radii must be positive");
  require(wall_apex.lo > kMinWall && wall_base.lo > kMinWall,
          "wall_thickness must exceed 1 mm everywhere");
  require(base_truncation.lo >= 0.05 && base_truncation.hi <= 0.2,
          "base_truncation must lie in [0.05, 0.2]");
  require(lv_length.lo >= kMinLvLength,
          "lv_length must keep >= 6 myocardium-bearing SA slices at 10 mm spacing (>= 70 mm)");
  for (const Interval* r : {&myocardium, &blood_pool, &background}) {
    require(r->lo >= 0.0 && r->hi <= 1.0, "tissue intensities must lie in [0, 1]");
  }
  require(noise_sigma.lo >= 0.0, "noise sigma must be non-negative");
  // Shape invariants at every corner of the shape ranges.
  for (int mask = 0; mask < 64; ++mask) {
    auto pick = [mask](const Interval& r, int bit) { return (mask >> bit) & 1 ? r.hi : r.lo; };
    const double a = pick(endo_a, 0), b = pick(endo_b, 1), len = pick(lv_length, 2);
    const double ta = pick(wall_apex, 3), tb = pick(wall_base, 4), f = pick(base_truncation, 5);
    const double c = epi_long_semi_axis(len, f) - ta;
    require(c > 0, "endo_radii must be positive (wall_apex too large for lv_length)");
    require(unimodal_profile(a, b, c, ta, tb),
            "wall profile must give a unimodal myocardium area along the long axis");
  }
}

void ViewConfig::validate() const {
  require(image_size > 0 && image_size % 16 == 0, "image_size must be a positive multiple of 16");
  require(pixel_spacing > 0 && slice_spacing > 0, "spacings must be positive");
  require(acquisition_size >= image_size, "acquisition_size must be >= image_size");
  require(stack_margin >= 0, "stack_margin must be non-negative");
  check_interval(basal_gap, "basal_gap");
  require(basal_gap.lo > 0 && basal_gap.hi < slice_spacing,
          "basal_gap must lie inside (0, slice_spacing)");
  require(apex_clearance >= 0 && apex_clearance < slice_spacing - 1.0,
          "apex_clearance must be < slice_spacing - 1 mm");
  for (int i = 0; i < 3; ++i) {
    for (int j = i + 1; j < 3; ++j) {
      const double d = std::fmod(std::abs(la_angles_deg[i] - la_angles_deg[j]), 180.0);
      require(d > 1e-6 && 180.0 - d > 1e-6, "LA planes must be pairwise non-parallel");
    }
  }
}

AnatomyParams sample_anatomy(std::uint64_t seed, const ParamRanges& ranges) {
  ranges.validate();
  Rng rng(seed);
  auto draw = [&rng](const Interval& r) { return rng.uniform(r.lo, r.hi); };
  AnatomyParams p;
  const double a = draw(ranges.endo_a);
  const double b = draw(ranges.endo_b);
  const double len = draw(ranges.lv_length);
  const double ta = draw(ranges.wall_apex);
  const double tb = draw(ranges.wall_base);
  const double f = draw(ranges.base_truncation);
  p.endo_radii = {a, b, epi_long_semi_axis(len, f) - ta};
  p.wall_thickness = {ta, tb};
  p.base_truncation = f;
  for (auto& r : p.rotation) r = draw(ranges.rotation);
  for (auto& t : p.translation) t = draw(ranges.translation);
  p.intensity.myocardium = draw(ranges.myocardium);
  p.intensity.blood_pool = draw(ranges.blood_pool);
  p.intensity.background = draw(ranges.background);
  p.intensity.noise_sigma = draw(ranges.noise_sigma);
  // Recomputed from the stored fields so the length identity holds exactly.
  p.lv_length = 2.0 * p.epi_radii()[2] * (1.0 - p.base_truncation);
  p.validate();
  return p;
}

RasterizedView rasterize_view(const AnatomyParams& anatomy, const ViewPlane& plane,
                              std::uint64_t noise_seed) {
  anatomy.validate();
  plane.validate();
  RasterizedView out{Image(plane.rows, plane.cols), Mask(plane.rows, plane.cols)};
  const IntensityModel& im = anatomy.intensity;
  Rng rng(noise_seed);
  for (int r = 0; r < plane.rows; ++r) {
    for (int c = 0; c < plane.cols; ++c) {
      const Tissue t = anatomy.classify(plane.pixel_center(r, c));
      double v = im.background;
      if (t == Tissue::kMyocardium) {
        v = im.myocardium;
        out.mask(r, c) = 1;
      } else if (t == Tissue::kBloodPool) {
        v = im.blood_pool;
      }
      if (im.noise_sigma > 0.0) v += im.noise_sigma * rng.normal();
      out.image(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

TargetSlices select_target_slices(const std::vector<int>& bearing) {
  if (bearing.size() < 3) {
    throw GenerationError("need at least 3 myocardium-bearing slices, got " + std::to_string(bearing.size()));
  }
  const auto pick = [&bearing](int quarter) {
    const std::size_t pos = (quarter * (bearing.size() - 1)) / 4;  // floor(p * (n - 1))
    return bearing[pos];
  };
  return {pick(1), pick(2), pick(3)};
}

// ------------------------------------------------------------- subject

const Image& Subject::source_view(int i) const {
  if (i < 0 || i >= kNumSourceViews) throw IndexError("source view index out of range");
  return i < 3 ? la_images[i] : sa_images.at(targets.mid);
}

const Mask& Subject::target_mask(int j) const {
  if (j < 0 || j >= kNumTargetViews) throw IndexError("target view index out of range");
  switch (j) {
    case 3: return sa_masks.at(targets.mid);
    case 4: return sa_masks.at(targets.apical);
    case 5: return sa_masks.at(targets.basal);
    default: return la_masks[j];
  }
}

const ViewPlane& Subject::target_plane(int j) const {
  if (j < 0 || j >= kNumTargetViews) throw IndexError("target view index out of range");
  switch (j) {
    case 3: return sa_planes.at(targets.mid);
    case 4: return sa_planes.at(targets.apical);
    case 5: return sa_planes.at(targets.basal);
    default: return la_planes[j];
  }
}

std::vector<int> Subject::bearing_slices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < sa_masks.size(); ++i) {
    if (foreground_count(sa_masks[i]) > 0) out.push_back(static_cast<int>(i));
  }
  return out;
}

Subject generate_subject(const AnatomyParams& anatomy, const ViewConfig& view, std::uint64_t seed,
                         const std::string& id) {
  anatomy.validate();
  view.validate();
  Subject s;
  s.id = id;
  s.seed = seed;
  s.anatomy = anatomy;
  s.spacing = {view.pixel_spacing, view.pixel_spacing, view.slice_spacing};

  const Eigen::Matrix3d rot = anatomy.rotation_matrix();
  const Vec3 axis = rot.col(2);
  const double apex = anatomy.apex_z();
  const double base = anatomy.base_z();

  // Long-axis views: planes containing the LV axis, rotated about it.
  const Vec3 la_center = anatomy.to_world(Vec3(0, 0, 0.5 * (apex + base)));
  for (int k = 0; k < 3; ++k) {
    const double th = view.la_angles_deg[k] * std::numbers::pi / 180.0;
    const Vec3 dir = rot * Vec3(std::cos(th), std::sin(th), 0.0);
    s.la_planes[k] = ViewPlane::centered_at(la_center, dir, -axis, view.pixel_spacing,
                                            view.image_size, view.image_size);
    auto r = rasterize_view(anatomy, s.la_planes[k], mix_seed(seed, 1 + k));
    s.la_images[k] = std::move(r.image);
    s.la_masks[k] = std::move(r.mask);
  }

  // Short-axis stack positions, anchored below the truncation plane and
  // kept clear of the apex tip.
  Rng rng(mix_seed(seed, 0x5A));
  const double sp = view.slice_spacing;
  auto apex_ok = [&](double gap) {
    const double delta = std::fmod(base - gap - apex, sp);
    return delta >= view.apex_clearance && sp - delta >= 1.0;
  };
  double gap = 0.0;
  bool found = false;
  for (int attempt = 0; attempt < 64 && !found; ++attempt) {
    gap = rng.uniform(view.basal_gap.lo, view.basal_gap.hi);
    found = apex_ok(gap);
  }
  for (int k = 0; k <= 1000 && !found; ++k) {
    gap = view.basal_gap.lo + (view.basal_gap.hi - view.basal_gap.lo) * k / 1000.0;
    found = apex_ok(gap);
  }
  if (!found) throw GenerationError("no SA stack placement satisfies the apex clearance");

  std::vector<double> zs;
  for (double z = base - gap; z >= apex - view.stack_margin; z -= sp) zs.push_back(z);
  for (double z = base - gap + sp; z <= base + view.stack_margin; z += sp) zs.push_back(z);
  std::sort(zs.begin(), zs.end());

  const Vec3 col_axis = rot.col(0);
  const Vec3 row_axis = rot.col(1);
  for (std::size_t k = 0; k < zs.size(); ++k) {
    const Vec3 on_axis = anatomy.to_world(Vec3(0, 0, zs[k]));
    // Acquisition field of view centered on the scanner isocenter (world
    // origin) projected into the slice plane.
    const Vec3 fov_center = axis * axis.dot(on_axis);
    const ViewPlane acq = ViewPlane::centered_at(fov_center, col_axis, row_axis, view.pixel_spacing,
                                                 view.acquisition_size, view.acquisition_size);
    auto raster = rasterize_view(anatomy, acq, mix_seed(seed, 16 + k));
    const Vec3 center = la_intersection_center(s.la_planes, acq);
    auto crop = crop_to_roi(raster.image, raster.mask, acq, center, view.image_size);
    s.sa_images.push_back(std::move(crop.image));
    s.sa_masks.push_back(std::move(crop.mask));
    s.sa_planes.push_back(crop.plane);
  }

  const auto bearing = s.bearing_slices();
  if (bearing.size() < 3) {
    throw GenerationError("anatomy yields " + std::to_string(bearing.size()) +
                          " myocardium-bearing SA slices; at least 3 are needed");
  }
  s.targets = select_target_slices(bearing);
  const MaskTopology mid = mask_topology(s.sa_masks[s.targets.mid]);
  if (mid.components != 1 || mid.holes != 1) {
    throw GenerationError("Mid-V mask is not a closed ring");
  }
  return s;
}

// ------------------------------------------------------------- dataset

std::string canonical_generator_config(const DatasetOptions& o) {
  std::ostringstream os;
  auto iv = [&os](const char* name, const Interval& r) {
    os << name << '=' << fmt_double(r.lo) << ',' << fmt_double(r.hi) << '\n';
  };
  const ParamRanges& r = o.ranges;
  iv("endo_a", r.endo_a);
  iv("endo_b", r.endo_b);
  iv("lv_length", r.lv_length);
  iv("wall_apex", r.wall_apex);
  iv("wall_base", r.wall_base);
  iv("base_truncation", r.base_truncation);
  iv("rotation", r.rotation);
  iv("translation", r.translation);
  iv("myocardium", r.myocardium);
  iv("blood_pool", r.blood_pool);
  iv("background", r.background);
  iv("noise_sigma", r.noise_sigma);
  const ViewConfig& v = o.view;
  os << "image_size=" << v.image_size << '\n'
     << "pixel_spacing=" << fmt_double(v.pixel_spacing) << '\n'
     << "slice_spacing=" << fmt_double(v.slice_spacing) << '\n'
     << "acquisition_size=" << v.acquisition_size << '\n'
     << "stack_margin=" << fmt_double(v.stack_margin) << '\n'
     << "la_angles_deg=" << fmt_double(v.la_angles_deg[0]) << ',' << fmt_double(v.la_angles_deg[1])
     << ',' << fmt_double(v.la_angles_deg[2]) << '\n';
  iv("basal_gap", v.basal_gap);
  os << "apex_clearance=" << fmt_double(v.apex_clearance) << '\n'
     << "train_fraction=" << fmt_double(o.train_fraction) << '\n';
  return os.str();
}

DatasetManifest generate_dataset(int n_subjects, std::uint64_t seed, const fs::path& out_dir,
                                 const DatasetOptions& options) {
  if (n_subjects < kMinDatasetSubjects) {
    throw ConfigError("n_subjects must be >= " + std::to_string(kMinDatasetSubjects) + " (got " +
                      std::to_string(n_subjects) + ")");
  }
  if (!(options.train_fraction > 0.0 && options.train_fraction < 1.0)) {
    throw ConfigError("train split fraction must lie in (0, 1)");
  }
  options.ranges.validate();
  options.view.validate();

  const bool existed = fs::exists(out_dir);
  if (existed && !fs::is_directory(out_dir)) {
    throw InputError("output path exists and is not a directory: " + out_dir.string());
  }
  if (existed && !fs::is_empty(out_dir)) {
    if (!options.overwrite) {
      throw ConfigError("output directory is not empty: " + out_dir.string() +
                       " (set overwrite to replace it)");
    }
    for (const auto& e : fs::directory_iterator(out_dir)) fs::remove_all(e.path());
  }
  fs::create_directories(out_dir);

  const int width = std::max(4, static_cast<int>(std::to_string(n_subjects - 1).size()));
  DatasetManifest manifest;
  manifest.generator_seed = seed;
  manifest.config_hash = fnv1a_hex(canonical_generator_config(options));
  manifest.spacing = {options.view.pixel_spacing, options.view.pixel_spacing,
                      options.view.slice_spacing};
  manifest.root = out_dir;

  try {
    for (int k = 0; k < n_subjects; ++k) {
      std::string id = std::to_string(k);
      id = "s" + std::string(width - id.size(), '0') + id;
      const std::uint64_t subject_seed = mix_seed(seed, static_cast<std::uint64_t>(k));
      const AnatomyParams anatomy = sample_anatomy(subject_seed, options.ranges);
      const Subject subject = generate_subject(anatomy, options.view, mix_seed(subject_seed, 1), id);
      write_subject(subject, out_dir / id);
      manifest.subjects.push_back({id, id, subject_seed, Split::kTrain});
    }
    std::vector<int> order(n_subjects);
    for (int k = 0; k < n_subjects; ++k) order[k] = k;
    Rng split_rng(mix_seed(seed, 0xD5));
    split_rng.shuffle(order);
    const long n_train = std::clamp<long>(std::lround(options.train_fraction * n_subjects), 1,
                                          n_subjects - 1);
    for (long k = n_train; k < n_subjects; ++k) manifest.subjects[order[k]].split = Split::kTest;
    write_manifest(manifest, out_dir);
  } catch (...) {
    // Leave no partially valid dataset behind.
    if (existed) {
      for (const auto& e : fs::directory_iterator(out_dir)) fs::remove_all(e.path());
    } else {
      fs::remove_all(out_dir);
    }
    throw;
  }
  return manifest;
}

}  // namespace mvseg
