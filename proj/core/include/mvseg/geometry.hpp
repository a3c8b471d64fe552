#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <vector>

#include "mvseg/grid.hpp"

namespace mvseg {

using Vec3 = Eigen::Vector3d;

// An imaging plane sampled on a regular pixel grid. Pixel (r, c) has its
// center at origin + c * spacing_col * axis_col + r * spacing_row * axis_row.
struct ViewPlane {
  Vec3 origin = Vec3::Zero();
  Vec3 axis_col = Vec3::UnitX();
  Vec3 axis_row = Vec3::UnitY();
  double spacing_row = 1.8;
  double spacing_col = 1.8;
  int rows = 128;
  int cols = 128;

  // Plane whose pixel (rows / 2, cols / 2) center sits at `center`.
  static ViewPlane centered_at(const Vec3& center, const Vec3& axis_col, const Vec3& axis_row,
                               double spacing, int rows, int cols);

  Vec3 normal() const { return axis_col.cross(axis_row); }
  Vec3 pixel_center(double row, double col) const {
    return origin + col * spacing_col * axis_col + row * spacing_row * axis_row;
  }
  // Continuous (row, col) of the orthogonal projection of `p` onto the plane.
  Eigen::Vector2d to_pixel(const Vec3& p) const;
  double signed_distance(const Vec3& p) const { return normal().dot(p - origin); }

  ViewPlane transformed(const Eigen::Isometry3d& t) const;

  // Throws GeometryError unless the axes are orthonormal and the grid is
  // non-degenerate.
  void validate() const;
};

struct IntersectionLine {
  Vec3 point = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
};

// Line shared by two planes; `point` is the point of the line closest to
// the origin. Throws GeometryError when the planes are (near) parallel.
IntersectionLine intersect_planes(const ViewPlane& a, const ViewPlane& b);

// Least-squares point on the SA plane minimizing the summed squared
// distance to the three (LA plane ∩ SA plane) lines. Equals the common
// point when the lines are concurrent.
Vec3 la_intersection_center(const std::array<ViewPlane, 3>& la_planes, const ViewPlane& sa_plane);

struct RoiCrop {
  Image image;
  Mask mask;
  int row0 = 0;  // source index of output pixel (0, 0)
  int col0 = 0;
};

// Output pixel (out_size/2, out_size/2) takes the source pixel nearest to
// (center_row, center_col); regions outside the source are zero.
RoiCrop crop_to_roi(const Image& image, const Mask& mask, double center_row, double center_col,
                    int out_size = 128);

struct PlaneCrop {
  Image image;
  Mask mask;
  ViewPlane plane;  // geometry of the cropped grid
};

PlaneCrop crop_to_roi(const Image& image, const Mask& mask, const ViewPlane& plane,
                      const Vec3& center, int out_size = 128);

struct ConsistencyResult {
  double agreement = 1.0;
  int samples = 0;
  // Set when the intersection segment misses one of the fields of view.
  bool empty_overlap = false;
};

// Nearest-pixel label agreement between two masks along the intersection
// of their planes, sampled at `n_samples` evenly spaced points of the
// segment clipped to both fields of view.
ConsistencyResult consistency_check(const Mask& mask_a, const ViewPlane& plane_a,
                                    const Mask& mask_b, const ViewPlane& plane_b,
                                    int n_samples);

enum class SliceRegion { kEmpty, kApex, kMid, kBase };

const char* to_string(SliceRegion r);

// Labels an apex-to-base ordered stack. Non-empty slices are split into
// index thirds; the count-mod-3 remainder goes to the middle third.
std::vector<SliceRegion> stratify_slices(const std::vector<Mask>& sa_masks);

}  // namespace mvseg
