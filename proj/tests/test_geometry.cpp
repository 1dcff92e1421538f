#include <gtest/gtest.h>

#include <Eigen/LU>
#include <cmath>
#include <limits>
#include <random>

#include "mdepth/errors.hpp"
#include "mdepth/geometry.hpp"
#include "test_util.hpp"

using namespace mdepth;
using mdepth::testing::random_pose;

namespace {

// Elementary rotations written out from their trigonometric definitions.
Eigen::Matrix3d rot_x(double a) {
  Eigen::Matrix3d m;
  m << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return m;
}
Eigen::Matrix3d rot_y(double a) {
  Eigen::Matrix3d m;
  m << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return m;
}
Eigen::Matrix3d rot_z(double a) {
  Eigen::Matrix3d m;
  m << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return m;
}

}  // namespace

TEST(PoseToMatrix, ZeroPoseIsExactIdentity) {
  EXPECT_EQ(pose_to_matrix(Pose6{}).matrix(), Eigen::Matrix4d::Identity());
}

TEST(PoseToMatrix, QuarterTurnAboutZMapsXToY) {
  const SE3Matrix m = pose_to_matrix({0, 0, 0, 0, 0, M_PI / 2});
  const Eigen::Vector3d x = m.apply(Eigen::Vector3d::UnitX());
  EXPECT_NEAR((x - Eigen::Vector3d::UnitY()).norm(), 0.0, 1e-15);
  EXPECT_EQ(m.translation(), Eigen::Vector3d::Zero());
}

TEST(PoseToMatrix, MatchesElementaryRotationProduct) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const Pose6 p = random_pose(rng);
    const SE3Matrix m = pose_to_matrix(p);
    const Eigen::Matrix3d expected = rot_z(p.rz) * rot_y(p.ry) * rot_x(p.rx);
    EXPECT_LT((m.rotation() - expected).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_EQ(m.translation(), Eigen::Vector3d(p.tx, p.ty, p.tz));
  }
}

TEST(PoseToMatrix, RejectsNonFinitePose) {
  Pose6 p;
  p.ry = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(pose_to_matrix(p), InvalidArgument);
  p.ry = 0;
  p.tx = std::numeric_limits<double>::infinity();
  EXPECT_THROW(pose_to_matrix(p), InvalidArgument);
}

TEST(PoseToMatrix, RoundTripsThroughMatrixToPose) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const Pose6 p = random_pose(rng, 2.0, 1.4);
    const Pose6 q = matrix_to_pose(pose_to_matrix(p));
    const auto a = p.as_array(), b = q.as_array();
    for (int k = 0; k < 6; ++k) EXPECT_NEAR(a[k], b[k], 1e-10);
  }
}

TEST(EulerDerivatives, MatchCentralDifferences) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const Pose6 p = random_pose(rng);
    const auto d = euler_rotation_derivatives(p.rx, p.ry, p.rz);
    const double h = 1e-6;
    const Eigen::Matrix3d nx = (euler_rotation(p.rx + h, p.ry, p.rz) - euler_rotation(p.rx - h, p.ry, p.rz)) / (2 * h);
    const Eigen::Matrix3d ny = (euler_rotation(p.rx, p.ry + h, p.rz) - euler_rotation(p.rx, p.ry - h, p.rz)) / (2 * h);
    const Eigen::Matrix3d nz = (euler_rotation(p.rx, p.ry, p.rz + h) - euler_rotation(p.rx, p.ry, p.rz - h)) / (2 * h);
    EXPECT_LT((d[0] - nx).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((d[1] - ny).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((d[2] - nz).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Invert, IdentityAndPureTranslation) {
  EXPECT_EQ(invert(SE3Matrix::identity()).matrix(), Eigen::Matrix4d::Identity());
  const SE3Matrix t = invert(pose_to_matrix({1, 2, 3, 0, 0, 0}));
  EXPECT_EQ(t.rotation(), Eigen::Matrix3d::Identity());
  EXPECT_EQ(t.translation(), Eigen::Vector3d(-1, -2, -3));
}

TEST(Invert, ThousandRandomPosesAgainstGeneralInverse) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const SE3Matrix m = pose_to_matrix(random_pose(rng, 5.0));
    const SE3Matrix inv = invert(m);
    EXPECT_LT(((inv * m).matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((inv.matrix() - m.matrix().inverse()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(SE3Matrix, RejectsNonRigidInput) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m(0, 0) = 2.0;
  EXPECT_THROW(SE3Matrix{m}, InvalidArgument);
  m = Eigen::Matrix4d::Identity();
  m(3, 0) = 0.5;
  EXPECT_THROW(SE3Matrix{m}, InvalidArgument);
  m = Eigen::Matrix4d::Identity();
  m(2, 2) = -1.0;  // reflection, det -1
  EXPECT_THROW(SE3Matrix{m}, InvalidArgument);
}

TEST(SE3Matrix, CompositionActsSequentially) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 500; ++i) {
    const SE3Matrix a = pose_to_matrix(random_pose(rng)), b = pose_to_matrix(random_pose(rng));
    const Eigen::Vector3d p(u(rng), u(rng), u(rng));
    EXPECT_LT(((a * b).apply(p) - a.apply(b.apply(p))).norm(), 1e-9);
  }
}

TEST(Backproject, PrincipalRayAndOffAxisPixel) {
  const Intrinsics k{100, 100, 0, 0, 101, 3};
  Field d(3, 101, 1, 2.0);
  const PointGrid g = backproject(d, k);
  EXPECT_DOUBLE_EQ(g.points.at(100, 0, 0), 2.0);
  EXPECT_DOUBLE_EQ(g.points.at(100, 0, 1), 0.0);
  EXPECT_DOUBLE_EQ(g.points.at(100, 0, 2), 2.0);

  const Intrinsics c{50, 60, 3, 2, 7, 5};
  Field d5(5, 7, 1, 5.0);
  const PointGrid p = backproject(d5, c);
  EXPECT_DOUBLE_EQ(p.points.at(3, 2, 0), 0.0);
  EXPECT_DOUBLE_EQ(p.points.at(3, 2, 1), 0.0);
  EXPECT_DOUBLE_EQ(p.points.at(3, 2, 2), 5.0);
}

TEST(Backproject, RejectsNonPositiveDepth) {
  const Intrinsics k{10, 10, 1, 1, 3, 3};
  Field d(3, 3, 1, 1.0);
  d.at(1, 1) = 0.0;
  EXPECT_THROW(backproject(d, k), InvalidArgument);
  d.at(1, 1) = -2.0;
  EXPECT_THROW(backproject(d, k), InvalidArgument);
}

TEST(Project, PrincipalPointAndBehindCamera) {
  const Intrinsics k{50, 60, 3, 2, 7, 5};
  PointGrid g{Field(1, 2, 3, 0.0)};
  g.points.at(0, 0, 2) = 5.0;
  g.points.at(1, 0, 0) = 1.0;
  g.points.at(1, 0, 2) = 0.0;
  const Projection pr = project(g, k);
  EXPECT_DOUBLE_EQ(pr.coords.at(0, 0, 0), 3.0);
  EXPECT_DOUBLE_EQ(pr.coords.at(0, 0, 1), 2.0);
  EXPECT_DOUBLE_EQ(pr.depth.at(0, 0), 5.0);
  EXPECT_EQ(pr.valid.at(0, 0), 1);
  EXPECT_EQ(pr.valid.at(1, 0), 0);
}

TEST(Project, MatchesScalarFormulaOnRandomPoints) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-3, 3), uz(0.1, 20);
  const Intrinsics k{71.5, 64.25, 30.5, 20.25, 64, 48};
  PointGrid g{Field(6, 8, 3)};
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) {
      g.points.at(x, y, 0) = u(rng);
      g.points.at(x, y, 1) = u(rng);
      g.points.at(x, y, 2) = uz(rng);
    }
  const Projection pr = project(g, k);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) {
      const double px = g.points.at(x, y, 0), py = g.points.at(x, y, 1), pz = g.points.at(x, y, 2);
      EXPECT_NEAR(pr.coords.at(x, y, 0), k.fx * px / pz + k.cx, 1e-12);
      EXPECT_NEAR(pr.coords.at(x, y, 1), k.fy * py / pz + k.cy, 1e-12);
      EXPECT_EQ(pr.depth.at(x, y), pz);
    }
}

TEST(Project, BackprojectRoundTrip) {
  std::mt19937_64 rng(13);
  const Intrinsics k{80, 75, 15.5, 11.5, 32, 24};
  for (int trial = 0; trial < 10; ++trial) {
    const Field d = mdepth::testing::random_field(24, 32, 1, rng, 0.05, 100.0);
    const Projection pr = project(backproject(d, k), k);
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 32; ++x) {
        EXPECT_NEAR(pr.coords.at(x, y, 0), x, 1e-6);
        EXPECT_NEAR(pr.coords.at(x, y, 1), y, 1e-6);
        EXPECT_NEAR(pr.depth.at(x, y), d.at(x, y), 1e-9);
      }
  }
}

TEST(Intrinsics, ValidationAndTextRoundTrip) {
  EXPECT_THROW((Intrinsics{0, 1, 0, 0, 4, 4}.validate()), InvalidArgument);
  EXPECT_THROW((Intrinsics{1, 1, 4, 0, 4, 4}.validate()), InvalidArgument);
  EXPECT_NO_THROW((Intrinsics{1, 1, 3.9, 0, 4, 4}.validate()));
  const Intrinsics k{721.5377, 721.5377, 609.5593, 172.854, 1242, 375};
  const Intrinsics r = parse_intrinsics(format_intrinsics(k));
  EXPECT_EQ(r.fx, k.fx);
  EXPECT_EQ(r.fy, k.fy);
  EXPECT_EQ(r.cx, k.cx);
  EXPECT_EQ(r.cy, k.cy);
  EXPECT_EQ(r.width, k.width);
  EXPECT_EQ(r.height, k.height);
  EXPECT_THROW(parse_intrinsics("fx=1\nfy=1\n"), ConfigError);
}

TEST(Intrinsics, DownsampledMatchesPooledPixelCenters) {
  // A pooled pixel (X, Y) averages source centers 2X, 2X+1, so it sits at
  // source coordinate 2X + 0.5; projecting a point must agree at both scales.
  const Intrinsics k{64, 60, 31.5, 23.5, 64, 48};
  const Intrinsics h = k.downsampled();
  EXPECT_EQ(h.width, 32);
  EXPECT_EQ(h.height, 24);
  const Eigen::Vector3d p(0.7, -0.4, 3.0);
  const double xs = k.fx * p.x() / p.z() + k.cx, ys = k.fy * p.y() / p.z() + k.cy;
  const double xh = h.fx * p.x() / p.z() + h.cx, yh = h.fy * p.y() / p.z() + h.cy;
  EXPECT_NEAR(2 * xh + 0.5, xs, 1e-12);
  EXPECT_NEAR(2 * yh + 0.5, ys, 1e-12);
}
