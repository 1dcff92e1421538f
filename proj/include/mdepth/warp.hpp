#pragma once

#include <vector>

#include "mdepth/diffengine.hpp"
#include "mdepth/field.hpp"
#include "mdepth/geometry.hpp"

namespace mdepth {

// H x W x C intensities in [0, 1], C in {1, 3}.
class ImageField {
 public:
  ImageField() = default;
  // Throws InvalidArgument on non-finite or out-of-range values. Values within
  // 1e-12 of the range are snapped onto it.
  explicit ImageField(Field f);

  const Field& field() const { return field_; }
  int width() const { return field_.width; }
  int height() const { return field_.height; }
  int channels() const { return field_.channels; }
  double at(int x, int y, int c = 0) const { return field_.at(x, y, c); }

 private:
  Field field_;
};

// H x W strictly positive, finite depths.
class DepthMap {
 public:
  DepthMap() = default;
  explicit DepthMap(Field f);

  const Field& field() const { return field_; }
  int width() const { return field_.width; }
  int height() const { return field_.height; }
  double at(int x, int y) const { return field_.at(x, y); }

 private:
  Field field_;
};

using ValidityMask = Mask;

struct WarpResult {
  ImageField image;
  ValidityMask validity;
  Field coords;  // H x W x 2 sampling coordinates in the source image
};

// Pose as a 1 x 1 x 6 field (tx ty tz rx ry rz), the layout rigid_transform expects.
Field pose_field(const Pose6& p);
Pose6 pose_from_field(const Field& f);

struct SampleValue {
  std::vector<double> value;  // one entry per channel
  bool in_bounds = false;
};
SampleValue bilinear_sample(const ImageField& img, double x, double y);

// On-tape warp: src sampled at K * E * (D(x,y) K^-1 [x y 1]^T).
struct WarpVars {
  ad::Var image;
  ValidityMask validity;  // in bounds and in front of the camera
  ad::Var coords;
};
WarpVars inverse_warp(const ad::Var& src, const ad::Var& target_depth, const ad::Var& motion, const Intrinsics& k);

// Sampling coordinates for target pixels after applying motions in order
// (motions[0] first). validity covers only the z > kNearPlane test.
struct CoordVars {
  ad::Var coords;
  ValidityMask front;
};
CoordVars transformed_coordinates(const ad::Var& points, const std::vector<ad::Var>& motions, const Intrinsics& k);

WarpResult inverse_warp(const ImageField& src, const DepthMap& target_depth, const Pose6& motion, const Intrinsics& k);

}  // namespace mdepth
