#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mdepth/geometry.hpp"
#include "mdepth/motion.hpp"
#include "mdepth/warp.hpp"

namespace mdepth::synth {

enum class Layout { plane, ground_wall };

// Fronto-parallel (world z = const) textured rectangle.
struct ObjectSpec {
  int object_id = 1;
  int category_id = 0;
  double width = 1.0;   // world units
  double height = 1.0;  // world units; the "correct" height prior for its category
  Eigen::Vector3d position{0, 0, 4};  // center at frame 0, world frame
  Eigen::Vector3d velocity{0, 0, 0};  // world translation per frame
};

// World frame = camera frame of frame 0. Camera k sits at T_k = M^k where
// M = pose_to_matrix(camera_step), so camera_step is also the ground-truth
// ego motion E_{k -> k+1} used to inverse-warp frame k into frame k+1.
struct SceneSpec {
  Intrinsics k{64, 64, 31.5, 31.5, 64, 64};
  Layout layout = Layout::plane;
  double wall_depth = 6.0;      // world z of the background plane
  double ground_height = 1.5;   // world y of the ground plane (ground_wall only)
  Pose6 camera_step;
  std::vector<ObjectSpec> objects;
  std::uint64_t texture_seed = 1;
  double texture_frequency = 0.125;  // lattice cells per world unit, coarsest octave
  double texture_contrast = 0.45;    // half-range of the summed octaves around 0.5
  int frame_count = 3;

  // Throws InvalidArgument on degenerate geometry.
  void validate() const;
};

struct RenderedFrame {
  ImageField image;
  DepthMap depth;
  std::vector<InstanceMask> masks;  // objects visible in the frame
};

// Pinhole render with point sampling at pixel centers, analytic z-depth, and
// a 4-octave value-noise texture attached to each surface.
RenderedFrame render(const SceneSpec& spec, int frame);

SE3Matrix camera_pose(const SceneSpec& spec, int frame);  // world-from-camera
// Motion mapping target-camera points into the source camera.
Pose6 ego_motion(const SceneSpec& spec, int target, int source);
// Object motion in the composite convention: ego(object(P)) maps a target-frame
// point on the object to its source-frame camera coordinates.
Pose6 object_motion(const SceneSpec& spec, const ObjectSpec& obj, int target, int source);

struct SampleTruth {
  DepthMap depth;  // middle frame
  Pose6 ego_prev;
  Pose6 ego_next;
  std::map<int, Pose6> object_prev;
  std::map<int, Pose6> object_next;
};

struct LabeledSample {
  SequenceSample sample;
  SampleTruth truth;
};

// Window (center-1, center, center+1).
LabeledSample make_sample(const SceneSpec& spec, int center, const std::string& name);
// Every window of a spec with frame_count >= 3, centers 1..frame_count-2.
std::vector<LabeledSample> make_stream(const SceneSpec& spec, const std::string& prefix);

// Presets.
SceneSpec static_scene(std::uint64_t seed = 1, int size = 64);
// Ground + wall, camera translation (0.1, 0, 0.05) and yaw 0.02 rad per frame.
SceneSpec standard_scene(std::uint64_t seed = 1, int size = 64);
// standard_scene plus one object translating laterally.
SceneSpec dynamic_scene(std::uint64_t seed = 1, int size = 64);
// Pure forward camera motion with one object moving at exactly the camera's
// velocity: the object is static in the image while the background flows.
SceneSpec degenerate_follow_scene(const SceneSpec& base = standard_scene());
// Random plane/ground scene without objects (warp consistency checks).
SceneSpec random_static_scene(std::uint64_t seed, int size = 64);

// Deterministic value noise in [0, 1] at a 3D point.
double value_noise(const Eigen::Vector3d& p, std::uint64_t seed);

}  // namespace mdepth::synth
