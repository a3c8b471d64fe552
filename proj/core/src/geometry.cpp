#include "mvseg/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "mvseg/error.hpp"

namespace mvseg {
namespace {

constexpr double kParallelTol = 1e-9;

int nearest_index(double x) { return static_cast<int>(std::floor(x + 0.5)); }

// Parameter interval of `p + t d` whose projection stays inside the
// plane's field of view [-0.5, n - 0.5] along both axes.
bool clip_to_fov(const ViewPlane& plane, const IntersectionLine& line, double& t0, double& t1) {
  const Eigen::Vector2d base = plane.to_pixel(line.point);
  const Eigen::Vector2d step{line.direction.dot(plane.axis_row) / plane.spacing_row,
                             line.direction.dot(plane.axis_col) / plane.spacing_col};
  const double lim[2] = {static_cast<double>(plane.rows), static_cast<double>(plane.cols)};
  for (int k = 0; k < 2; ++k) {
    const double lo = -0.5, hi = lim[k] - 0.5;
    if (std::abs(step[k]) < 1e-15) {
      if (base[k] < lo || base[k] > hi) return false;
      continue;
    }
    double a = (lo - base[k]) / step[k];
    double b = (hi - base[k]) / step[k];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  return t1 > t0;
}

std::uint8_t sample_nearest(const Mask& m, const ViewPlane& plane, const Vec3& p) {
  const Eigen::Vector2d rc = plane.to_pixel(p);
  const int r = std::clamp(nearest_index(rc[0]), 0, m.rows() - 1);
  const int c = std::clamp(nearest_index(rc[1]), 0, m.cols() - 1);
  return m(r, c) != 0;
}

}  // namespace

ViewPlane ViewPlane::centered_at(const Vec3& center, const Vec3& axis_col, const Vec3& axis_row,
                                 double spacing, int rows, int cols) {
  ViewPlane p;
  p.axis_col = axis_col;
  p.axis_row = axis_row;
  p.spacing_row = spacing;
  p.spacing_col = spacing;
  p.rows = rows;
  p.cols = cols;
  p.origin = center - (cols / 2) * spacing * axis_col - (rows / 2) * spacing * axis_row;
  return p;
}

Eigen::Vector2d ViewPlane::to_pixel(const Vec3& p) const {
  const Vec3 d = p - origin;
  return {d.dot(axis_row) / spacing_row, d.dot(axis_col) / spacing_col};
}

ViewPlane ViewPlane::transformed(const Eigen::Isometry3d& t) const {
  ViewPlane p = *this;
  p.origin = t * origin;
  p.axis_col = t.linear() * axis_col;
  p.axis_row = t.linear() * axis_row;
  return p;
}

void ViewPlane::validate() const {
  if (std::abs(axis_col.norm() - 1.0) > 1e-9 || std::abs(axis_row.norm() - 1.0) > 1e-9 ||
      std::abs(axis_col.dot(axis_row)) > 1e-9) {
    throw GeometryError("view plane axes are not orthonormal");
  }
  if (!(spacing_row > 0.0) || !(spacing_col > 0.0) || rows <= 0 || cols <= 0) {
    throw GeometryError("view plane has a degenerate pixel grid");
  }
  if (!origin.allFinite()) throw GeometryError("view plane origin is not finite");
}

IntersectionLine intersect_planes(const ViewPlane& a, const ViewPlane& b) {
  const Vec3 n1 = a.normal();
  const Vec3 n2 = b.normal();
  const Vec3 dir = n1.cross(n2);
  const double s = dir.squaredNorm();
  if (dir.norm() < kParallelTol) throw GeometryError("planes are parallel; no intersection line");
  const double d1 = n1.dot(a.origin);
  const double d2 = n2.dot(b.origin);
  IntersectionLine line;
  // Closest point to the origin satisfying n1.x = d1 and n2.x = d2.
  line.point = (d1 * n2.cross(dir) + d2 * dir.cross(n1)) / s;
  line.direction = dir / std::sqrt(s);
  return line;
}

Vec3 la_intersection_center(const std::array<ViewPlane, 3>& la_planes, const ViewPlane& sa_plane) {
  Eigen::Matrix<double, 3, 2> basis;
  basis.col(0) = sa_plane.axis_col;
  basis.col(1) = sa_plane.axis_row;
  Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
  Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
  for (const auto& la : la_planes) {
    IntersectionLine line;
    try {
      line = intersect_planes(la, sa_plane);
    } catch (const GeometryError&) {
      throw GeometryError("LA plane is parallel to the SA plane");
    }
    const Eigen::Matrix3d proj = Eigen::Matrix3d::Identity() - line.direction * line.direction.transpose();
    a += basis.transpose() * proj * basis;
    rhs += basis.transpose() * proj * (line.point - sa_plane.origin);
  }
  Eigen::FullPivLU<Eigen::Matrix2d> lu(a);
  if (!lu.isInvertible() || std::abs(a.determinant()) < 1e-12 * std::max(1.0, a.squaredNorm())) {
    throw GeometryError("LA/SA intersection lines are parallel; center undefined");
  }
  const Eigen::Vector2d st = lu.solve(rhs);
  return sa_plane.origin + basis * st;
}

RoiCrop crop_to_roi(const Image& image, const Mask& mask, double center_row, double center_col,
                    int out_size) {
  if (!image.same_shape(mask)) throw ShapeError("crop_to_roi: image and mask shapes differ");
  if (out_size <= 0) throw ConfigError("crop_to_roi: output size must be positive");
  const int cr = nearest_index(center_row);
  const int cc = nearest_index(center_col);
  if (!image.in_bounds(cr, cc)) throw InputError("crop_to_roi: center lies outside the source grid");
  RoiCrop out;
  out.row0 = cr - out_size / 2;
  out.col0 = cc - out_size / 2;
  out.image = Image(out_size, out_size, 0.0f);
  out.mask = Mask(out_size, out_size, 0);
  for (int r = 0; r < out_size; ++r) {
    for (int c = 0; c < out_size; ++c) {
      const int sr = r + out.row0, sc = c + out.col0;
      if (!image.in_bounds(sr, sc)) continue;
      out.image(r, c) = image(sr, sc);
      out.mask(r, c) = mask(sr, sc);
    }
  }
  return out;
}

PlaneCrop crop_to_roi(const Image& image, const Mask& mask, const ViewPlane& plane,
                      const Vec3& center, int out_size) {
  const Eigen::Vector2d rc = plane.to_pixel(center);
  RoiCrop crop = crop_to_roi(image, mask, rc[0], rc[1], out_size);
  PlaneCrop out;
  out.image = std::move(crop.image);
  out.mask = std::move(crop.mask);
  out.plane = plane;
  out.plane.origin = plane.pixel_center(crop.row0, crop.col0);
  out.plane.rows = out_size;
  out.plane.cols = out_size;
  return out;
}

ConsistencyResult consistency_check(const Mask& mask_a, const ViewPlane& plane_a,
                                    const Mask& mask_b, const ViewPlane& plane_b,
                                    int n_samples) {
  if (mask_a.rows() != plane_a.rows || mask_a.cols() != plane_a.cols ||
      mask_b.rows() != plane_b.rows || mask_b.cols() != plane_b.cols) {
    throw ShapeError("consistency_check: mask does not match its plane size");
  }
  if (n_samples <= 0) throw ConfigError("consistency_check: n_samples must be positive");
  ConsistencyResult result;
  if (&plane_a == &plane_b || (plane_a.origin == plane_b.origin &&
                               plane_a.axis_col == plane_b.axis_col &&
                               plane_a.axis_row == plane_b.axis_row)) {
    // Coincident planes: compare over the shared grid diagonal.
    int agree = 0;
    for (int k = 0; k < n_samples; ++k) {
      const double f = (k + 0.5) / n_samples;
      const Vec3 p = plane_a.pixel_center(f * (plane_a.rows - 1), f * (plane_a.cols - 1));
      agree += sample_nearest(mask_a, plane_a, p) == sample_nearest(mask_b, plane_b, p);
    }
    result.samples = n_samples;
    result.agreement = static_cast<double>(agree) / n_samples;
    return result;
  }
  const IntersectionLine line = intersect_planes(plane_a, plane_b);
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  if (!clip_to_fov(plane_a, line, t0, t1) || !clip_to_fov(plane_b, line, t0, t1)) {
    result.empty_overlap = true;
    return result;
  }
  int agree = 0;
  for (int k = 0; k < n_samples; ++k) {
    const double t = t0 + (k + 0.5) * (t1 - t0) / n_samples;
    const Vec3 p = line.point + t * line.direction;
    agree += sample_nearest(mask_a, plane_a, p) == sample_nearest(mask_b, plane_b, p);
  }
  result.samples = n_samples;
  result.agreement = static_cast<double>(agree) / n_samples;
  return result;
}

const char* to_string(SliceRegion r) {
  switch (r) {
    case SliceRegion::kEmpty: return "empty";
    case SliceRegion::kApex: return "apex";
    case SliceRegion::kMid: return "mid";
    case SliceRegion::kBase: return "base";
  }
  return "?";
}

std::vector<SliceRegion> stratify_slices(const std::vector<Mask>& sa_masks) {
  std::vector<SliceRegion> out(sa_masks.size(), SliceRegion::kEmpty);
  std::vector<std::size_t> bearing;
  for (std::size_t i = 0; i < sa_masks.size(); ++i) {
    if (foreground_count(sa_masks[i]) > 0) bearing.push_back(i);
  }
  if (bearing.empty()) throw StratificationError("stratify_slices: every slice is empty");
  const std::size_t third = bearing.size() / 3;
  for (std::size_t k = 0; k < bearing.size(); ++k) {
    SliceRegion r = SliceRegion::kMid;
    if (k < third) {
      r = SliceRegion::kApex;
    } else if (k >= bearing.size() - third) {
      r = SliceRegion::kBase;
    }
    out[bearing[k]] = r;
  }
  return out;
}

}  // namespace mvseg
