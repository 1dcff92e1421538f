#include "mdepth/motion.hpp"

#include <algorithm>
#include <set>

#include "mdepth/errors.hpp"

namespace mdepth {

void InstanceMaskSet::validate() const {
  for (const auto& frame : frames) {
    std::set<int> ids;
    Mask used(height, width, 0);
    for (const auto& obj : frame) {
      if (obj.object_id <= 0) throw InvalidArgument("instance mask: object ids must be positive");
      if (obj.category_id < 0) throw InvalidArgument("instance mask: negative category id");
      if (!ids.insert(obj.object_id).second) throw InvalidArgument("instance mask: duplicate object id");
      if (obj.mask.height != height || obj.mask.width != width) {
        throw InvalidArgument("instance mask: shape mismatch");
      }
      for (std::size_t i = 0; i < used.size(); ++i) {
        if (obj.mask.data[i] && used.data[i]) throw InvalidArgument("instance mask: overlapping objects");
        if (obj.mask.data[i]) used.data[i] = 1;
      }
    }
  }
}

std::vector<const InstanceMask*> InstanceMaskSet::middle_objects() const {
  std::vector<const InstanceMask*> out;
  for (const auto& obj : frames[1]) out.push_back(&obj);
  std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->object_id < b->object_id; });
  return out;
}

bool InstanceMaskSet::empty() const {
  return std::all_of(frames.begin(), frames.end(), [](const auto& f) { return f.empty(); });
}

void SequenceSample::validate() const {
  const ImageField& mid = frames[1];
  for (const auto& f : frames) {
    if (f.width() != mid.width() || f.height() != mid.height() || f.channels() != mid.channels()) {
      throw InvalidArgument("sample " + name + ": frames differ in shape");
    }
  }
  if (mid.width() != k.width || mid.height() != k.height) {
    throw InvalidArgument("sample " + name + ": intrinsics do not match frame size");
  }
  if (masks.width != mid.width() || masks.height != mid.height()) {
    throw InvalidArgument("sample " + name + ": masks do not match frame size");
  }
  masks.validate();
}

ValidityMask static_mask(const InstanceMaskSet& masks) {
  Mask moving(masks.height, masks.width, 0);
  for (const auto& frame : masks.frames)
    for (const auto& obj : frame) moving = mask_or(moving, obj.mask);
  return mask_not(moving);
}

std::array<ImageField, 3> masked_ego_input(const SequenceSample& sample) {
  const Mask keep = static_mask(sample.masks);
  std::array<ImageField, 3> out;
  for (int f = 0; f < 3; ++f) {
    Field img = sample.frames[static_cast<std::size_t>(f)].field();
    const int c = img.channels;
    for (std::size_t p = 0; p < keep.size(); ++p)
      for (int k = 0; k < c; ++k) img.data[p * c + k] *= keep.data[p];
    out[static_cast<std::size_t>(f)] = ImageField(std::move(img));
  }
  return out;
}

WarpVars composite_warp(const ad::Var& src, const ad::Var& target_depth, const ad::Var& ego,
                        const std::vector<ObjectMotionVar>& objects, const Intrinsics& k) {
  const Field& s = src.value();
  const Field& d = target_depth.value();
  if (s.width != k.width || s.height != k.height || d.width != k.width || d.height != k.height) {
    throw ContractViolation("composite_warp: shapes inconsistent with intrinsics");
  }
  ad::Var points = ad::backproject(target_depth, k);
  CoordVars base = transformed_coordinates(points, {ego}, k);
  ad::Var coords = base.coords;
  Mask front = base.front;
  for (const auto& obj : objects) {
    CoordVars moved = transformed_coordinates(points, {obj.motion, ego}, k);
    coords = ad::select(*obj.mask, moved.coords, coords);
    for (std::size_t i = 0; i < front.size(); ++i)
      if (obj.mask->data[i]) front.data[i] = moved.front.data[i];
  }
  auto sample = ad::bilinear_sample(src, coords);
  return {sample.values, mask_and(front, sample.in_bounds), coords};
}

CompositeWarp composite_warp(const SequenceSample& sample, const DepthMap& middle_depth, const Pose6& ego,
                             const std::vector<Pose6>& obj_motions, WarpSource source) {
  const auto objects = sample.masks.middle_objects();
  if (objects.size() != obj_motions.size()) {
    throw ContractViolation("composite_warp: expected one motion per middle-frame object");
  }
  ad::Tape tape;
  const ImageField& src = sample.frames[source == WarpSource::previous ? 0 : 2];
  std::vector<ObjectMotionVar> vars;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    vars.push_back({&objects[i]->mask, tape.constant(pose_field(obj_motions[i]))});
  }
  WarpVars w = composite_warp(tape.constant(src.field()), tape.constant(middle_depth.field()),
                              tape.constant(pose_field(ego)), vars, sample.k);
  return {ImageField(w.image.value()), std::move(w.validity), ego, obj_motions};
}

Mask downsample_mask(const Mask& m) {
  Mask out(m.height / 2, m.width / 2, 0);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const int n = m.at(2 * x, 2 * y) + m.at(2 * x + 1, 2 * y) + m.at(2 * x, 2 * y + 1) + m.at(2 * x + 1, 2 * y + 1);
      out.at(x, y) = n >= 2 ? 1 : 0;
    }
  }
  return out;
}

}  // namespace mdepth
