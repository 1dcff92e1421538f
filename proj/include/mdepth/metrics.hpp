#pragma once

#include <string>
#include <vector>

#include "mdepth/field.hpp"
#include "mdepth/geometry.hpp"
#include "mdepth/warp.hpp"

namespace mdepth {

enum class DepthScaling { none, median };

struct DepthEvalConfig {
  double cap = 80.0;
  double min_depth = 1e-3;
  DepthScaling scaling = DepthScaling::median;

  void validate() const;
};

struct DepthMetrics {
  double abs_rel = 0;
  double sq_rel = 0;
  double rmse = 0;
  double rmse_log = 0;
  double delta1 = 0;  // fraction with max(p/g, g/p) < 1.25
  double delta2 = 0;  // < 1.25^2
  double delta3 = 0;  // < 1.25^3
  std::size_t count = 0;
};

// Pixels count when valid and min_depth < gt <= cap. The prediction is
// optionally scaled by median(gt)/median(pred) over those pixels, then clamped
// to [min_depth, cap]. Throws NumericError when no pixel qualifies.
DepthMetrics depth_metrics(const Field& pred, const Field& gt, const Mask& valid, const DepthEvalConfig& cfg);
DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt, const Mask& valid, const DepthEvalConfig& cfg);

// Pixel-count weighted mean of several records (per-sequence aggregation).
DepthMetrics average_metrics(const std::vector<DepthMetrics>& records);

struct AteResult {
  double mean = 0;
  double std = 0;
  std::size_t snippets = 0;
};

// Absolute trajectory error over sliding snippets (stride 1). Poses are
// camera-to-world; within each snippet translations are expressed relative to
// its first pose, the prediction is least-squares scaled onto the ground truth,
// and the RMSE of the translation residuals is taken. Returns mean and
// population std over snippets.
AteResult ate(const std::vector<Pose6>& pred, const std::vector<Pose6>& gt, int snippet_len = 5);

}  // namespace mdepth
