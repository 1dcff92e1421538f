#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mdepth/diffengine.hpp"
#include "mdepth/field.hpp"
#include "mdepth/motion.hpp"
#include "mdepth/synthdata.hpp"

namespace mdepth::io {

namespace fs = std::filesystem;

// Images: gray or RGB Field with values in [0, 1]. bit_depth 8 or 16.
void write_png(const fs::path& path, const Field& image, int bit_depth = 16);
Field read_png(const fs::path& path);

// Raw 8-bit RGB buffer (row-major, height x width x 3).
void write_rgb8(const fs::path& path, int height, int width, const std::vector<std::uint8_t>& rgb);

// Little-endian PFM (scale -1), rows stored bottom to top. 1 or 3 channels.
void write_pfm(const fs::path& path, const Field& field);
Field read_pfm(const fs::path& path);

// 8-bit gray label image, pixel = object id (0 = background).
void write_label_png(const fs::path& path, int height, int width, const std::vector<InstanceMask>& masks);
// One InstanceMask per id present; category looked up in `categories` (id -> category).
std::vector<InstanceMask> read_label_png(const fs::path& path, const std::map<int, int>& categories);

// Checkpoint directory: checkpoint.bin holds, per parameter in name order,
// three little-endian uint32 dims (h, w, c) then h*w*c little-endian float32;
// checkpoint.json indexes names, shapes, byte offsets and trainable flags.
void save_checkpoint(const fs::path& dir, const ad::ParamSet& params);
ad::ParamSet load_checkpoint(const fs::path& dir);

// Scene description <-> JSON text (lossless for doubles).
std::string scene_to_json(const synth::SceneSpec& spec);
synth::SceneSpec scene_from_json(const std::string& text);

// Dataset layout:
//   <root>/seq_<n>/frame_<k>.png   16-bit RGB
//   <root>/seq_<n>/depth_<k>.pfm   ground-truth z-depth
//   <root>/seq_<n>/mask_<k>.png    object ids
//   <root>/seq_<n>/meta.json       scene, intrinsics, camera poses, objects
void write_sequence(const fs::path& root, int index, const synth::SceneSpec& spec);

struct Sequence {
  std::string name;  // seq_<n>
  Intrinsics k;
  std::vector<ImageField> frames;
  std::vector<DepthMap> depths;
  std::vector<std::vector<InstanceMask>> masks;
  std::vector<Pose6> camera_poses;  // world-from-camera per frame
  synth::SceneSpec scene;
};

Sequence read_sequence(const fs::path& dir);
// Every seq_<n> directory under root, in increasing n.
std::vector<Sequence> read_dataset(const fs::path& root);

struct Window {
  SequenceSample sample;  // named <seq>/<center>
  DepthMap gt_depth;      // middle frame
  Pose6 gt_ego_prev;
  Pose6 gt_ego_next;
};
// Windows centered at 1 .. frames-2 of every sequence, in order.
std::vector<Window> windows(const std::vector<Sequence>& dataset);

// Fixed 256-entry perceptual colormap (dark = 0, bright = 255).
const std::array<std::array<std::uint8_t, 3>, 256>& colormap();
// Maps values linearly from [lo, hi] onto the colormap (clamped).
std::vector<std::uint8_t> heatmap(const Field& values, double lo, double hi);

void ensure_directory(const fs::path& dir);
std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace mdepth::io
