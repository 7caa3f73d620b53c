#include <gtest/gtest.h>

#include <cmath>

#include "align/box.hpp"
#include "align/random.hpp"

namespace {

using align::Box;
using align::giou;
using align::iou;
using align::to_corners;

Box random_box(align::Rng& rng) {
  return Box(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.35),
             rng.uniform(0.05, 0.35));
}

TEST(Geometry, CornerConversion) {
  const auto c1 = to_corners(Box(0.5, 0.5, 0.4, 0.4));
  EXPECT_DOUBLE_EQ(c1.x1, 0.3);
  EXPECT_DOUBLE_EQ(c1.y1, 0.3);
  EXPECT_DOUBLE_EQ(c1.x2, 0.7);
  EXPECT_DOUBLE_EQ(c1.y2, 0.7);

  const auto c2 = to_corners(Box(0.5, 0.5, 1.0, 1.0));
  EXPECT_DOUBLE_EQ(c2.x1, 0.0);
  EXPECT_DOUBLE_EQ(c2.y1, 0.0);
  EXPECT_DOUBLE_EQ(c2.x2, 1.0);
  EXPECT_DOUBLE_EQ(c2.y2, 1.0);

  const auto c3 = to_corners(Box(0.2, 0.2, 0.2, 0.2));
  EXPECT_NEAR(c3.x1, 0.1, 1e-15);
  EXPECT_NEAR(c3.y1, 0.1, 1e-15);
  EXPECT_NEAR(c3.x2, 0.3, 1e-15);
  EXPECT_NEAR(c3.y2, 0.3, 1e-15);
}

TEST(Geometry, ConstructionRejectsDegenerateBoxes) {
  EXPECT_THROW(Box(0.5, 0.5, 0.0, 0.2), std::invalid_argument);
  EXPECT_THROW(Box(0.5, 0.5, 1e-7, 0.2), std::invalid_argument);
  EXPECT_THROW(Box(0.5, 0.5, 0.2, -0.1), std::invalid_argument);
  EXPECT_THROW(Box(1.2, 0.5, 0.2, 0.2), std::invalid_argument);
  EXPECT_THROW(Box(0.5, -0.1, 0.2, 0.2), std::invalid_argument);
  EXPECT_THROW(Box(0.5, 0.5, 1.5, 0.2), std::invalid_argument);
  EXPECT_THROW(Box(std::nan(""), 0.5, 0.2, 0.2), std::invalid_argument);
  EXPECT_NO_THROW(Box(0.5, 0.5, 1e-6, 1.0));
}

TEST(Geometry, IouExamples) {
  const Box b(0.37, 0.61, 0.22, 0.18);
  EXPECT_DOUBLE_EQ(iou(b, b), 1.0);

  // nested: inner area 0.04 over union 0.16
  EXPECT_NEAR(iou(Box(0.5, 0.5, 0.4, 0.4), Box(0.5, 0.5, 0.2, 0.2)), 0.25, 1e-12);

  // disjoint
  EXPECT_DOUBLE_EQ(iou(Box(0.2, 0.2, 0.2, 0.2), Box(0.8, 0.8, 0.2, 0.2)), 0.0);
}

TEST(Geometry, GiouExamples) {
  const Box b(0.37, 0.61, 0.22, 0.18);
  EXPECT_DOUBLE_EQ(giou(b, b), 1.0);

  // disjoint: enclosure (0.1,0.1,0.9,0.9) area 0.64, union 0.08, 0 - 0.56/0.64
  EXPECT_NEAR(giou(Box(0.2, 0.2, 0.2, 0.2), Box(0.8, 0.8, 0.2, 0.2)), -0.875, 1e-12);

  // nested: enclosure equals the outer box, penalty term 0
  EXPECT_NEAR(giou(Box(0.5, 0.5, 0.4, 0.4), Box(0.5, 0.5, 0.2, 0.2)), 0.25, 1e-12);
}

TEST(Geometry, SymmetryAndOrdering) {
  align::Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const Box a = random_box(rng);
    const Box b = random_box(rng);
    EXPECT_DOUBLE_EQ(iou(a, b), iou(b, a));
    EXPECT_DOUBLE_EQ(giou(a, b), giou(b, a));
    EXPECT_LE(giou(a, b), iou(a, b) + 1e-15);
    EXPECT_GE(giou(a, b), -1.0);
    EXPECT_LE(giou(a, b), 1.0);
    EXPECT_GE(iou(a, b), 0.0);
    EXPECT_LE(iou(a, b), 1.0);
  }
}

TEST(Geometry, GiouEqualsIouWhenEnclosureEqualsUnionRegion) {
  // Nested boxes: the enclosing box coincides with the outer box.
  const Box outer(0.5, 0.5, 0.6, 0.6);
  const Box inner(0.5, 0.5, 0.3, 0.3);
  EXPECT_DOUBLE_EQ(giou(outer, inner), iou(outer, inner));
}

TEST(Geometry, TranslationInvariance) {
  align::Rng rng(13);
  for (int i = 0; i < 1000; ++i) {
    const Box a(rng.uniform(0.3, 0.5), rng.uniform(0.3, 0.5), rng.uniform(0.05, 0.2),
                rng.uniform(0.05, 0.2));
    const Box b(rng.uniform(0.3, 0.5), rng.uniform(0.3, 0.5), rng.uniform(0.05, 0.2),
                rng.uniform(0.05, 0.2));
    const double dx = rng.uniform(-0.15, 0.15);
    const double dy = rng.uniform(-0.15, 0.15);
    const Box at(a.cx + dx, a.cy + dy, a.w, a.h);
    const Box bt(b.cx + dx, b.cy + dy, b.w, b.h);
    EXPECT_NEAR(iou(a, b), iou(at, bt), 1e-12);
    EXPECT_NEAR(giou(a, b), giou(at, bt), 1e-12);
  }
}

TEST(Geometry, ScaleInvarianceAboutCommonCenter) {
  align::Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    const double cx = 0.5, cy = 0.5;
    const Box a(cx + rng.uniform(-0.1, 0.1), cy + rng.uniform(-0.1, 0.1), rng.uniform(0.05, 0.2),
                rng.uniform(0.05, 0.2));
    const Box b(cx + rng.uniform(-0.1, 0.1), cy + rng.uniform(-0.1, 0.1), rng.uniform(0.05, 0.2),
                rng.uniform(0.05, 0.2));
    const double sc = rng.uniform(0.5, 1.5);
    auto scale_about = [&](const Box& x) {
      return Box(cx + (x.cx - cx) * sc, cy + (x.cy - cy) * sc, x.w * sc, x.h * sc);
    };
    const Box as = scale_about(a);
    const Box bs = scale_about(b);
    EXPECT_NEAR(iou(a, b), iou(as, bs), 1e-10);
    EXPECT_NEAR(giou(a, b), giou(as, bs), 1e-10);
  }
}

TEST(Geometry, GiouGradValueAgreesWithGiou) {
  align::Rng rng(19);
  for (int i = 0; i < 500; ++i) {
    const Box a = random_box(rng);
    const Box b = random_box(rng);
    EXPECT_DOUBLE_EQ(align::giou_with_grad(a, b).value, giou(a, b));
  }
}

}  // namespace
