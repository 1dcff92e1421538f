#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mdepth/metrics.hpp"
#include "mdepth/synthdata.hpp"
#include "mdepth/trainer.hpp"

namespace mdepth {

enum class ScenePreset { static_plane, standard, dynamic, degenerate, random };

struct SynthSettings {
  ScenePreset scene = ScenePreset::standard;
  std::uint64_t seed = 1;
  int size = 64;
  int sequences = 1;
  int frames = 3;
  double texture_frequency = 0.125;
  double texture_contrast = 0.45;

  // Scene of sequence n (seeded with seed + n).
  synth::SceneSpec scene_spec(int n) const;
};

struct PathSettings {
  std::string data;         // dataset root (seq_<n> directories)
  std::string checkpoint;   // checkpoint directory, optional for refine
  std::string predictions;  // directory with depth/*.pfm and poses.jsonl
};

// Everything a command needs. The loss flags live in train.loss
// (motion_model, size_constraint); refinement is a separate switch.
struct RunConfig {
  SynthSettings synth;
  TrainConfig train;
  DepthEvalConfig eval;
  int ate_snippet = 5;
  bool enable_refinement = false;
  PathSettings paths;

  // Throws ConfigError.
  void validate() const;
};

// INI text with sections synth, train, loss, refine, eval, flags, paths and
// priors (category id = initial height prior). Unknown sections or keys and
// unparsable values raise ConfigError. Overrides are "section.key=value" and
// are applied after the file.
RunConfig parse_config(const std::string& ini_text, const std::vector<std::string>& overrides = {});
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Fully resolved config, every key present; parse_config(format_config(c))
// reproduces c exactly.
std::string format_config(const RunConfig& config);

}  // namespace mdepth
