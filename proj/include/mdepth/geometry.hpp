#pragma once

#include <Eigen/Core>
#include <array>
#include <iosfwd>
#include <string>

#include "mdepth/field.hpp"

namespace mdepth {

// Camera conventions used everywhere in the library:
//  - right-handed camera frame, +x right, +y down, +z forward into the scene;
//  - pixel centers sit at integer coordinates (x, y) in {0..W-1} x {0..H-1}.
inline constexpr double kNearPlane = 1e-6;

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  // Throws InvalidArgument unless fx, fy > 0 and the principal point lies in the image.
  void validate() const;

  // Intrinsics of the image obtained by 2x2 average pooling (integer pixel
  // centers, so the principal point picks up a half-pixel shift).
  Intrinsics downsampled() const;

  Eigen::Matrix3d matrix() const;
};

// key=value text form: fx, fy, cx, cy, width, height.
std::string format_intrinsics(const Intrinsics& k);
Intrinsics parse_intrinsics(const std::string& text);

// Translation in world units, rotation as Euler angles in radians.
struct Pose6 {
  double tx = 0, ty = 0, tz = 0;
  double rx = 0, ry = 0, rz = 0;

  std::array<double, 6> as_array() const { return {tx, ty, tz, rx, ry, rz}; }
  static Pose6 from_array(const std::array<double, 6>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5]};
  }
  Eigen::Vector3d translation() const { return {tx, ty, tz}; }
  bool finite() const;
};

// Rotation block Rz(rz) * Ry(ry) * Rx(rx).
Eigen::Matrix3d euler_rotation(double rx, double ry, double rz);
// Partial derivatives of euler_rotation with respect to rx, ry, rz.
std::array<Eigen::Matrix3d, 3> euler_rotation_derivatives(double rx, double ry, double rz);

// 4x4 homogeneous rigid transform.
class SE3Matrix {
 public:
  SE3Matrix() : m_(Eigen::Matrix4d::Identity()) {}
  // Throws InvalidArgument if m is not a rigid transform (orthonormal R, det 1,
  // bottom row 0 0 0 1; tolerance 1e-9).
  explicit SE3Matrix(const Eigen::Matrix4d& m);
  SE3Matrix(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  static SE3Matrix identity() { return SE3Matrix(); }
  static bool is_rigid(const Eigen::Matrix4d& m, double tol = 1e-9);

  const Eigen::Matrix4d& matrix() const { return m_; }
  Eigen::Matrix3d rotation() const { return m_.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return m_.topRightCorner<3, 1>(); }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation() * p + translation(); }
  SE3Matrix operator*(const SE3Matrix& o) const;

 private:
  Eigen::Matrix4d m_;
};

SE3Matrix pose_to_matrix(const Pose6& p);
// Inverse of pose_to_matrix for rotations with |ry| < pi/2.
Pose6 matrix_to_pose(const SE3Matrix& m);
SE3Matrix invert(const SE3Matrix& m);

// H x W x 3 camera-frame points.
struct PointGrid {
  Field points;
};

struct Projection {
  Field coords;  // H x W x 2, (x_hat, y_hat)
  Field depth;   // H x W x 1, transformed z
  Mask valid;    // 0 where z <= kNearPlane
};

// depth must be H x W x 1, strictly positive, matching k.
PointGrid backproject(const Field& depth, const Intrinsics& k);
Projection project(const PointGrid& pts, const Intrinsics& k);

}  // namespace mdepth
