#pragma once

#include <map>
#include <string>
#include <vector>

#include "mdepth/diffengine.hpp"
#include "mdepth/motion.hpp"
#include "mdepth/warp.hpp"

namespace mdepth {

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

struct LossWeights {
  double rec = 0.85;
  double ssim = 0.15;
  double smooth = 0.04;
  double size = 0.01;
  int scales = 4;

  void validate() const;
};

// Category id -> height prior in world units.
using HeightPriors = std::map<int, double>;

// Flags which pieces of the model enter total_loss.
struct LossOptions {
  LossWeights weights;
  bool motion_model = true;
  bool size_constraint = true;
  bool occlusion_masking = true;
};

// Per-term values of one total_loss evaluation (unweighted).
struct LossBreakdown {
  std::vector<double> rec;
  std::vector<double> ssim;
  std::vector<double> smooth;  // already divided by 2^scale
  double size = 0;
  double total = 0;
  std::vector<std::string> warnings;

  std::string describe() const;
};

// Tape inputs of total_loss for one window, produced by a predictor.
struct SampleVars {
  ad::Var depth;  // middle frame, H x W x 1
  ad::Var ego_prev;
  ad::Var ego_next;
  std::map<int, ad::Var> object_prev;  // keyed by object id
  std::map<int, ad::Var> object_next;
  std::map<int, ad::Var> priors;  // keyed by category id
};

// ---- on-tape losses ----------------------------------------------------------

// Per-pixel channel-mean L1 error of each warped source, minimum over the
// sources valid at that pixel, averaged over pixels with at least one valid
// source. No valid pixel -> constant 0 and *degenerate = true.
ad::Var reconstruction_loss(const WarpVars& prev, const WarpVars& next, const ad::Var& target,
                            bool* degenerate = nullptr);

// Mean over valid pixels (and channels) of (1 - SSIM) / 2 with 3x3 box statistics.
ad::Var ssim_loss(const ad::Var& a, const ad::Var& b, const ValidityMask& validity);

// Edge-aware first-order smoothness of mean-normalized disparity.
ad::Var smoothness_loss(const ad::Var& depth, const ad::Var& image);

// Sum over objects of mean_{mask} |D / mean(D) - fy * p / (h * mean(D))|.
// Missing prior -> ConfigError; empty masks are skipped with a warning.
ad::Var size_constraint_loss(const ad::Var& depth, const std::vector<const InstanceMask*>& objects,
                             const std::map<int, ad::Var>& priors, const Intrinsics& k,
                             std::vector<std::string>* warnings = nullptr);

// Multi-scale objective for one window. Scale s works on 2^s-pooled frames and
// depth with matching intrinsics; the size term is evaluated at full
// resolution only.
ad::Var total_loss(ad::Tape& tape, const SequenceSample& sample, const SampleVars& vars, const LossOptions& options,
                   LossBreakdown* breakdown = nullptr);

// ---- value-level wrappers -------------------------------------------------------

double reconstruction_loss(const WarpResult& prev, const WarpResult& next, const ImageField& target,
                           bool* degenerate = nullptr);
double ssim_loss(const ImageField& a, const ImageField& b, const ValidityMask& validity);
double smoothness_loss(const DepthMap& depth, const ImageField& image);
// fy * prior / blob_height_px.
double approx_depth(double prior, int blob_height_px, const Intrinsics& k);
double size_constraint_loss(const DepthMap& depth, const std::vector<InstanceMask>& objects,
                            const HeightPriors& priors, const Intrinsics& k,
                            std::vector<std::string>* warnings = nullptr);

// Pixel height of the bounding box of a mask; 0 for an empty mask.
int blob_height(const Mask& m);

}  // namespace mdepth
