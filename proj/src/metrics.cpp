#include "mdepth/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "mdepth/errors.hpp"

namespace mdepth {

void DepthEvalConfig::validate() const {
  if (!(min_depth > 0) || !(cap > min_depth)) throw ConfigError("eval: need cap > min depth > 0");
}

namespace {

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

DepthMetrics depth_metrics(const Field& pred, const Field& gt, const Mask& valid, const DepthEvalConfig& cfg) {
  cfg.validate();
  if (!pred.same_shape(gt) || pred.channels != 1 || valid.height != gt.height || valid.width != gt.width) {
    throw ContractViolation("depth_metrics: shape mismatch");
  }
  std::vector<double> p, g;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!valid.data[i]) continue;
    if (!(gt.data[i] > cfg.min_depth) || gt.data[i] > cfg.cap) continue;
    p.push_back(pred.data[i]);
    g.push_back(gt.data[i]);
  }
  if (g.empty()) throw NumericError("depth_metrics: no valid ground-truth pixels");
  if (cfg.scaling == DepthScaling::median) {
    const double ratio = median(g) / median(p);
    for (double& v : p) v *= ratio;
  }
  for (double& v : p) v = std::clamp(v, cfg.min_depth, cfg.cap);

  DepthMetrics m;
  m.count = g.size();
  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0;
  std::size_t d1 = 0, d2 = 0, d3 = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double diff = p[i] - g[i];
    abs_rel += std::abs(diff) / g[i];
    sq_rel += diff * diff / g[i];
    sq += diff * diff;
    const double dl = std::log(p[i]) - std::log(g[i]);
    sq_log += dl * dl;
    const double ratio = std::max(p[i] / g[i], g[i] / p[i]);
    d1 += ratio < 1.25;
    d2 += ratio < 1.25 * 1.25;
    d3 += ratio < 1.25 * 1.25 * 1.25;
  }
  const double n = static_cast<double>(g.size());
  m.abs_rel = abs_rel / n;
  m.sq_rel = sq_rel / n;
  m.rmse = std::sqrt(sq / n);
  m.rmse_log = std::sqrt(sq_log / n);
  m.delta1 = static_cast<double>(d1) / n;
  m.delta2 = static_cast<double>(d2) / n;
  m.delta3 = static_cast<double>(d3) / n;
  return m;
}

DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt, const Mask& valid, const DepthEvalConfig& cfg) {
  return depth_metrics(pred.field(), gt.field(), valid, cfg);
}

DepthMetrics average_metrics(const std::vector<DepthMetrics>& records) {
  DepthMetrics out;
  double total = 0;
  for (const auto& r : records) total += static_cast<double>(r.count);
  if (total == 0) return out;
  for (const auto& r : records) {
    const double w = static_cast<double>(r.count) / total;
    out.abs_rel += w * r.abs_rel;
    out.sq_rel += w * r.sq_rel;
    out.rmse += w * r.rmse;
    out.rmse_log += w * r.rmse_log;
    out.delta1 += w * r.delta1;
    out.delta2 += w * r.delta2;
    out.delta3 += w * r.delta3;
    out.count += r.count;
  }
  return out;
}

AteResult ate(const std::vector<Pose6>& pred, const std::vector<Pose6>& gt, int snippet_len) {
  if (pred.size() != gt.size()) throw ContractViolation("ate: trajectories differ in length");
  if (snippet_len < 1 || static_cast<int>(gt.size()) < snippet_len) {
    throw ContractViolation("ate: trajectory shorter than the snippet length");
  }
  std::vector<double> errors;
  for (std::size_t start = 0; start + static_cast<std::size_t>(snippet_len) <= gt.size(); ++start) {
    const SE3Matrix p0 = invert(pose_to_matrix(pred[start]));
    const SE3Matrix g0 = invert(pose_to_matrix(gt[start]));
    std::vector<Eigen::Vector3d> pt, gtt;
    for (int i = 0; i < snippet_len; ++i) {
      pt.push_back((p0 * pose_to_matrix(pred[start + static_cast<std::size_t>(i)])).translation());
      gtt.push_back((g0 * pose_to_matrix(gt[start + static_cast<std::size_t>(i)])).translation());
    }
    double num = 0, den = 0;
    for (int i = 0; i < snippet_len; ++i) {
      num += gtt[static_cast<std::size_t>(i)].dot(pt[static_cast<std::size_t>(i)]);
      den += pt[static_cast<std::size_t>(i)].squaredNorm();
    }
    const double scale = den > 0 ? num / den : 1.0;
    double sq = 0;
    for (int i = 0; i < snippet_len; ++i) {
      sq += (scale * pt[static_cast<std::size_t>(i)] - gtt[static_cast<std::size_t>(i)]).squaredNorm();
    }
    errors.push_back(std::sqrt(sq / snippet_len));
  }
  AteResult r;
  r.snippets = errors.size();
  for (double e : errors) r.mean += e;
  r.mean /= static_cast<double>(errors.size());
  for (double e : errors) r.std += (e - r.mean) * (e - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(errors.size()));
  return r;
}

}  // namespace mdepth
