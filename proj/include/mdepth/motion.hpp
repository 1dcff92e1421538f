#pragma once

#include <array>
#include <string>
#include <vector>

#include "mdepth/diffengine.hpp"
#include "mdepth/warp.hpp"

namespace mdepth {

struct InstanceMask {
  int object_id = 0;    // > 0; 0 is reserved for background in mask files
  int category_id = 0;  // >= 0
  Mask mask;
};

// Object masks of a 3-frame window. The same object_id denotes the same
// physical object in every frame.
struct InstanceMaskSet {
  int height = 0;
  int width = 0;
  std::array<std::vector<InstanceMask>, 3> frames;

  // Throws InvalidArgument on overlapping masks within a frame, negative
  // categories, duplicate ids or mismatched shapes.
  void validate() const;
  // Middle-frame objects sorted by ascending object id.
  std::vector<const InstanceMask*> middle_objects() const;
  bool empty() const;
};

struct SequenceSample {
  std::string name;
  std::array<ImageField, 3> frames;  // previous, middle (warp target), next
  InstanceMaskSet masks;
  Intrinsics k;

  void validate() const;
};

enum class WarpSource { previous, next };

struct CompositeWarp {
  ImageField image;
  ValidityMask validity;
  Pose6 ego;
  std::vector<Pose6> object_motions;
};

// Complement of the union of every object mask over all three frames.
ValidityMask static_mask(const InstanceMaskSet& masks);

// Each frame multiplied elementwise by static_mask.
std::array<ImageField, 3> masked_ego_input(const SequenceSample& sample);

struct ObjectMotionVar {
  const Mask* mask;  // middle-frame mask at the working resolution
  ad::Var motion;
};

// On-tape composite: background pixels sample src through the ego motion;
// pixels of object i sample it through ego(object_i(P)), i.e. the object
// motion applied first and the ego motion second, resolved as one resample.
// Objects are composited in the given order (ascending id).
WarpVars composite_warp(const ad::Var& src, const ad::Var& target_depth, const ad::Var& ego,
                        const std::vector<ObjectMotionVar>& objects, const Intrinsics& k);

// obj_motions pairs with sample.masks.middle_objects(); a count mismatch is a
// ContractViolation.
CompositeWarp composite_warp(const SequenceSample& sample, const DepthMap& middle_depth, const Pose6& ego,
                             const std::vector<Pose6>& obj_motions, WarpSource source);

// Majority (>= 2 of 4) 2x2 pooling of a mask, matching ad::downsample2 extents.
Mask downsample_mask(const Mask& m);

}  // namespace mdepth
