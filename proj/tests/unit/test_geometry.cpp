#include <gtest/gtest.h>

#include <cmath>

#include "mvseg/geometry.hpp"
#include "mvseg/rng.hpp"

using namespace mvseg;

namespace {

ViewPlane plane_through(const Vec3& center, const Vec3& col, const Vec3& row) {
  return ViewPlane::centered_at(center, col.normalized(), row.normalized(), 1.8, 128, 128);
}

}  // namespace

TEST(ViewPlane, CenteredAtPutsCenterPixelThere) {
  const Vec3 c(3, -2, 5);
  const ViewPlane p = plane_through(c, Vec3::UnitX(), Vec3::UnitY());
  EXPECT_LT((p.pixel_center(64, 64) - c).norm(), 1e-12);
  const auto rc = p.to_pixel(c + Vec3(1.8, 0, 7));
  EXPECT_NEAR(rc.x(), 64.0, 1e-12);
  EXPECT_NEAR(rc.y(), 65.0, 1e-12);
}

TEST(ViewPlane, ValidateRejectsSkewAxes) {
  ViewPlane p;
  p.axis_row = Vec3(1, 1, 0).normalized();
  EXPECT_THROW(p.validate(), GeometryError);
  ViewPlane q;
  q.rows = 0;
  EXPECT_THROW(q.validate(), GeometryError);
}

TEST(IntersectPlanes, LineLiesInBothPlanes) {
  const ViewPlane a = plane_through(Vec3(0, 0, 0), Vec3::UnitX(), Vec3::UnitY());
  const ViewPlane b = plane_through(Vec3(0, 0, 4), Vec3::UnitX(), Vec3::UnitZ());
  const IntersectionLine l = intersect_planes(a, b);
  for (double t : {-10.0, 0.0, 25.0}) {
    const Vec3 p = l.point + t * l.direction;
    EXPECT_NEAR(a.signed_distance(p), 0.0, 1e-9);
    EXPECT_NEAR(b.signed_distance(p), 0.0, 1e-9);
  }
  EXPECT_THROW(intersect_planes(a, a), GeometryError);
}

TEST(LaIntersectionCenter, ConcurrentLinesGiveCommonPoint) {
  const Vec3 axis = Vec3(0.1, -0.2, 1.0).normalized();
  const Vec3 origin(4, 5, -3);
  const Vec3 u = axis.unitOrthogonal(), v = axis.cross(u);
  std::array<ViewPlane, 3> la;
  for (int k = 0; k < 3; ++k) {
    const double a = k * M_PI / 3.0;
    la[k] = plane_through(origin, std::cos(a) * u + std::sin(a) * v, axis);
  }
  const Vec3 p = origin + 12.0 * axis;
  const ViewPlane sa = plane_through(p + 3.0 * u, u, v);
  EXPECT_LT((la_intersection_center(la, sa) - p).norm(), 1e-9);
}

TEST(LaIntersectionCenter, TriangleMatchesGridSearch) {
  const ViewPlane sa = plane_through(Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY());
  std::array<ViewPlane, 3> la;
  const Vec3 offsets[3] = {Vec3(1, 0, 0), Vec3(-0.5, 2, 0), Vec3(0.3, -1.5, 0)};
  for (int k = 0; k < 3; ++k) {
    const double a = 0.3 + k * 1.1;
    la[k] = plane_through(offsets[k], Vec3(std::cos(a), std::sin(a), 0), Vec3::UnitZ());
  }
  const Vec3 c = la_intersection_center(la, sa);
  auto objective = [&](const Vec3& q) {
    double s = 0.0;
    for (const auto& p : la) s += std::pow(p.signed_distance(q), 2);
    return s;
  };
  Vec3 best = Vec3::Zero();
  double best_v = INFINITY;
  for (double x = -4; x <= 4; x += 0.005) {
    for (double y = -4; y <= 4; y += 0.005) {
      const double v = objective(Vec3(x, y, 0));
      if (v < best_v) {
        best_v = v;
        best = Vec3(x, y, 0);
      }
    }
  }
  EXPECT_NEAR(sa.signed_distance(c), 0.0, 1e-9);
  EXPECT_LT((c - best).norm(), 0.01);
  EXPECT_LE(objective(c), best_v + 1e-12);
}

TEST(CropToRoi, CenteredCropIsIdentity) {
  Image img(128, 128);
  Mask msk(128, 128);
  Rng rng(1);
  for (auto& v : img.values()) v = static_cast<float>(rng.uniform());
  for (auto& v : msk.values()) v = rng.uniform() < 0.5;
  const RoiCrop c = crop_to_roi(img, msk, 64.0, 64.0, 128);
  EXPECT_EQ(c.image, img);
  EXPECT_EQ(c.mask, msk);
}

TEST(CropToRoi, OffsetCropTakesTopLeftBlock) {
  Image img(256, 256);
  Mask msk(256, 256);
  for (int r = 0; r < 256; ++r) {
    for (int c = 0; c < 256; ++c) {
      img(r, c) = static_cast<float>(r * 256 + c);
      msk(r, c) = (r + c) % 3 == 0;
    }
  }
  const RoiCrop c = crop_to_roi(img, msk, 64.0, 64.0, 128);
  EXPECT_EQ(c.row0, 0);
  EXPECT_EQ(c.col0, 0);
  for (int r = 0; r < 128; ++r) {
    for (int k = 0; k < 128; ++k) {
      ASSERT_EQ(c.image(r, k), img(r, k));
      ASSERT_EQ(c.mask(r, k), msk(r, k));
    }
  }
}

TEST(CropToRoi, BorderPaddingIsZero) {
  Image img(128, 128, 0.5f);
  Mask msk(128, 128, 1);
  const RoiCrop c = crop_to_roi(img, msk, 5.0, 120.0, 128);
  int zeros = 0;
  for (int r = 0; r < 128; ++r) {
    for (int k = 0; k < 128; ++k) {
      const bool outside = !img.in_bounds(c.row0 + r, c.col0 + k);
      if (outside) {
        ASSERT_EQ(c.image(r, k), 0.0f);
        ASSERT_EQ(c.mask(r, k), 0);
        ++zeros;
      } else {
        ASSERT_EQ(c.mask(r, k), 1);
      }
    }
  }
  EXPECT_GT(zeros, 0);
}

TEST(ConsistencyCheck, SelfAgreementIsOne) {
  const ViewPlane a = plane_through(Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY());
  const ViewPlane b = plane_through(Vec3::Zero(), Vec3::UnitX(), Vec3::UnitZ());
  Mask ma(128, 128), mb(128, 128);
  for (int c = 30; c < 90; ++c) {
    ma(64, c) = 1;
    mb(64, c) = 1;
  }
  const auto r = consistency_check(ma, a, mb, b, 100);
  EXPECT_FALSE(r.empty_overlap);
  EXPECT_DOUBLE_EQ(r.agreement, 1.0);
}

TEST(ConsistencyCheck, OppositeLabelsAgreeNowhere) {
  const ViewPlane a = plane_through(Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY());
  const ViewPlane b = plane_through(Vec3::Zero(), Vec3::UnitX(), Vec3::UnitZ());
  const auto r = consistency_check(Mask(128, 128, 0), a, Mask(128, 128, 1), b, 100);
  EXPECT_DOUBLE_EQ(r.agreement, 0.0);
}

TEST(Stratify, ThirdsWithRemainderToMiddle) {
  auto count = [](int nonempty, int pad) {
    std::vector<Mask> stack;
    for (int k = 0; k < pad; ++k) stack.emplace_back(4, 4);
    for (int k = 0; k < nonempty; ++k) stack.emplace_back(4, 4, 1);
    for (int k = 0; k < pad; ++k) stack.emplace_back(4, 4);
    std::array<int, 4> n{};
    for (SliceRegion r : stratify_slices(stack)) ++n[static_cast<int>(r)];
    return n;
  };
  EXPECT_EQ(count(9, 1), (std::array<int, 4>{2, 3, 3, 3}));
  EXPECT_EQ(count(7, 0), (std::array<int, 4>{0, 2, 3, 2}));
  EXPECT_EQ(count(1, 2), (std::array<int, 4>{4, 0, 1, 0}));
  EXPECT_EQ(count(11, 0), (std::array<int, 4>{0, 3, 5, 3}));
}

TEST(Stratify, ApexSlicesComeFirst) {
  std::vector<Mask> stack(6, Mask(2, 2, 1));
  const auto r = stratify_slices(stack);
  EXPECT_EQ(r.front(), SliceRegion::kApex);
  EXPECT_EQ(r.back(), SliceRegion::kBase);
}

TEST(Stratify, AllEmptyThrows) {
  EXPECT_THROW(stratify_slices(std::vector<Mask>(4, Mask(2, 2))), StratificationError);
}

TEST(MaskTopology, AnnulusHasOneHole) {
  Mask m(20, 20);
  for (int r = 0; r < 20; ++r) {
    for (int c = 0; c < 20; ++c) {
      const double d = std::hypot(r - 9.5, c - 9.5);
      m(r, c) = d > 4 && d < 8;
    }
  }
  EXPECT_EQ(mask_topology(m).components, 1);
  EXPECT_EQ(mask_topology(m).holes, 1);
  Mask disk(10, 10);
  disk(4, 4) = disk(4, 5) = 1;
  disk(8, 8) = 1;
  EXPECT_EQ(mask_topology(disk).components, 2);
  EXPECT_EQ(mask_topology(disk).holes, 0);
}
