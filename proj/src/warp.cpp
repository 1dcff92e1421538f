#include "mdepth/warp.hpp"

#include <algorithm>
#include <cmath>

#include "mdepth/errors.hpp"

namespace mdepth {

ImageField::ImageField(Field f) : field_(std::move(f)) {
  if (field_.channels != 1 && field_.channels != 3) throw InvalidArgument("ImageField: channels must be 1 or 3");
  for (double& v : field_.data) {
    if (!std::isfinite(v) || v < -1e-12 || v > 1 + 1e-12) throw InvalidArgument("ImageField: value outside [0,1]");
    v = std::clamp(v, 0.0, 1.0);
  }
}

DepthMap::DepthMap(Field f) : field_(std::move(f)) {
  if (field_.channels != 1) throw InvalidArgument("DepthMap: expected a single channel");
  for (double v : field_.data) {
    if (!std::isfinite(v) || !(v > 0)) throw InvalidArgument("DepthMap: depth must be positive and finite");
  }
}

Field pose_field(const Pose6& p) {
  const auto a = p.as_array();
  return Field(1, 1, 6, std::vector<double>(a.begin(), a.end()));
}

Pose6 pose_from_field(const Field& f) {
  if (f.size() != 6) throw ContractViolation("pose field must have 6 components");
  return Pose6{f.data[0], f.data[1], f.data[2], f.data[3], f.data[4], f.data[5]};
}

SampleValue bilinear_sample(const ImageField& img, double x, double y) {
  ad::Tape tape;
  ad::Var src = tape.constant(img.field());
  ad::Var xy = tape.constant(Field(1, 1, 2, {x, y}));
  auto s = ad::bilinear_sample(src, xy);
  return {s.values.value().data, s.in_bounds.data[0] != 0};
}

CoordVars transformed_coordinates(const ad::Var& points, const std::vector<ad::Var>& motions, const Intrinsics& k) {
  ad::Var moved = points;
  for (const ad::Var& m : motions) moved = ad::rigid_transform(moved, m);
  auto proj = ad::project(moved, k);
  return {proj.coords, std::move(proj.valid)};
}

WarpVars inverse_warp(const ad::Var& src, const ad::Var& target_depth, const ad::Var& motion, const Intrinsics& k) {
  const Field& s = src.value();
  const Field& d = target_depth.value();
  if (s.width != k.width || s.height != k.height || d.width != k.width || d.height != k.height || d.channels != 1) {
    throw ContractViolation("inverse_warp: shapes inconsistent with intrinsics");
  }
  ad::Var points = ad::backproject(target_depth, k);
  CoordVars c = transformed_coordinates(points, {motion}, k);
  auto sample = ad::bilinear_sample(src, c.coords);
  return {sample.values, mask_and(c.front, sample.in_bounds), c.coords};
}

WarpResult inverse_warp(const ImageField& src, const DepthMap& target_depth, const Pose6& motion, const Intrinsics& k) {
  if (!motion.finite()) throw InvalidArgument("inverse_warp: non-finite motion");
  ad::Tape tape;
  WarpVars w = inverse_warp(tape.constant(src.field()), tape.constant(target_depth.field()),
                            tape.constant(pose_field(motion)), k);
  return {ImageField(w.image.value()), std::move(w.validity), w.coords.value()};
}

}  // namespace mdepth
