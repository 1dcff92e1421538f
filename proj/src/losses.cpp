#include "mdepth/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mdepth/errors.hpp"

namespace mdepth {

void LossWeights::validate() const {
  for (double w : {rec, ssim, smooth, size}) {
    if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
  }
  if (scales < 1) throw ConfigError("loss: scale count must be at least 1");
}

std::string LossBreakdown::describe() const {
  std::ostringstream os;
  os.precision(10);
  for (std::size_t s = 0; s < rec.size(); ++s) {
    os << "scale " << s << ": rec=" << rec[s] << " ssim=" << ssim[s] << " smooth=" << smooth[s] << "\n";
  }
  os << "size=" << size << " total=" << total << "\n";
  for (const auto& w : warnings) os << "warning: " << w << "\n";
  return os.str();
}

int blob_height(const Mask& m) {
  int top = m.height, bottom = -1;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      top = std::min(top, y);
      bottom = std::max(bottom, y);
    }
  }
  return bottom < 0 ? 0 : bottom - top + 1;
}

ad::Var reconstruction_loss(const WarpVars& prev, const WarpVars& next, const ad::Var& target, bool* degenerate) {
  ad::Tape& tape = *target.tape();
  const Mask& vp = prev.validity;
  const Mask& vn = next.validity;
  ad::Var err_prev = ad::channel_mean(ad::abs(prev.image - target));
  ad::Var err_next = ad::channel_mean(ad::abs(next.image - target));
  const Mask both = mask_and(vp, vn);
  const Mask any = mask_or(vp, vn);
  if (degenerate) *degenerate = any.count() == 0;
  ad::Var zero = tape.constant(Field(err_prev.height(), err_prev.width(), 1, 0.0));
  ad::Var single = ad::select(vp, err_prev, ad::select(vn, err_next, zero));
  ad::Var per_pixel = ad::select(both, ad::minimum(err_prev, err_next), single);
  return ad::masked_mean(per_pixel, any);
}

ad::Var ssim_loss(const ad::Var& a, const ad::Var& b, const ValidityMask& validity) {
  ad::Var mu_a = ad::box_filter3(a);
  ad::Var mu_b = ad::box_filter3(b);
  ad::Var var_a = ad::box_covariance3(a, a);
  ad::Var var_b = ad::box_covariance3(b, b);
  ad::Var cov = ad::box_covariance3(a, b);
  ad::Var num = (mu_a * mu_b * 2.0 + kSsimC1) * (cov * 2.0 + kSsimC2);
  ad::Var den = (mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2);
  ad::Var map = (1.0 - num / den) * 0.5;
  return ad::masked_mean(map, validity);
}

ad::Var smoothness_loss(const ad::Var& depth, const ad::Var& image) {
  const int h = depth.height(), w = depth.width();
  if (image.height() != h || image.width() != w) throw ContractViolation("smoothness_loss: shape mismatch");
  ad::Var disp = ad::reciprocal(depth);
  ad::Var norm = disp / ad::mean(disp);
  ad::Var gray = ad::channel_mean(image);
  ad::Var wx = ad::exp(-ad::abs(ad::crop(ad::diff_x(gray), h - 1, w - 1)));
  ad::Var wy = ad::exp(-ad::abs(ad::crop(ad::diff_y(gray), h - 1, w - 1)));
  ad::Var dx = ad::abs(ad::crop(ad::diff_x(norm), h - 1, w - 1));
  ad::Var dy = ad::abs(ad::crop(ad::diff_y(norm), h - 1, w - 1));
  return ad::mean(dx * wx + dy * wy);
}

double approx_depth(double prior, int blob_height_px, const Intrinsics& k) {
  if (blob_height_px < 1) throw InvalidArgument("approx_depth: blob height must be at least one pixel");
  if (!(prior > 0)) throw InvalidArgument("approx_depth: prior must be positive");
  return k.fy * prior / blob_height_px;
}

ad::Var size_constraint_loss(const ad::Var& depth, const std::vector<const InstanceMask*>& objects,
                             const std::map<int, ad::Var>& priors, const Intrinsics& k,
                             std::vector<std::string>* warnings) {
  ad::Tape& tape = *depth.tape();
  ad::Var total = tape.constant(0.0);
  if (objects.empty()) return total;
  ad::Var mean_depth = ad::mean(depth);
  for (const InstanceMask* obj : objects) {
    const int h = blob_height(obj->mask);
    if (h == 0) {
      if (warnings) warnings->push_back("size constraint: empty mask for object " + std::to_string(obj->object_id));
      continue;
    }
    auto it = priors.find(obj->category_id);
    if (it == priors.end()) {
      throw ConfigError("size constraint: no height prior for category " + std::to_string(obj->category_id));
    }
    ad::Var approx = it->second * (k.fy / h);
    ad::Var term = ad::masked_mean(ad::abs((depth - approx) / mean_depth), obj->mask);
    total = total + term;
  }
  return total;
}

namespace {

// Pixels whose bilinear footprint in the source reads a different motion
// layer (background or another object) than the one they are warped with.
Mask layer_consistent(const WarpVars& w, const std::vector<Mask>& middle, const std::vector<int>& middle_ids,
                      const std::vector<Mask>& source, const std::vector<int>& source_ids) {
  Mask out(w.validity.height, w.validity.width, 1);
  if (source.empty() && middle.empty()) return out;
  const auto labels = [](const std::vector<Mask>& masks, const std::vector<int>& ids, int h, int wd) {
    std::vector<int> l(static_cast<std::size_t>(h) * wd, 0);
    for (std::size_t i = 0; i < masks.size(); ++i)
      for (std::size_t j = 0; j < l.size(); ++j)
        if (masks[i].data[j]) l[j] = ids[i];
    return l;
  };
  const int h = out.height, wd = out.width;
  const std::vector<int> dst = labels(middle, middle_ids, h, wd);
  const std::vector<int> src = labels(source, source_ids, h, wd);
  const Field& c = w.coords.value();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < wd; ++x) {
      const int layer = dst[static_cast<std::size_t>(y) * wd + x];
      const double sx = std::clamp(c.at(x, y, 0), 0.0, wd - 1.0);
      const double sy = std::clamp(c.at(x, y, 1), 0.0, h - 1.0);
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, wd - 1), y1 = std::min(y0 + 1, h - 1);
      for (int yy : {y0, y1})
        for (int xx : {x0, x1})
          if (src[static_cast<std::size_t>(yy) * wd + xx] != layer) out.at(x, y) = 0;
    }
  }
  return out;
}

// 3x3 erosion with replicate borders, matching the SSIM window.
Mask erode3(const Mask& m) {
  Mask out(m.height, m.width, 0);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      std::uint8_t v = 1;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          v &= m.at(std::clamp(x + dx, 0, m.width - 1), std::clamp(y + dy, 0, m.height - 1));
      out.at(x, y) = v;
    }
  }
  return out;
}

std::vector<Mask> frame_masks(const InstanceMaskSet& masks, int frame) {
  std::vector<Mask> out;
  for (const auto& m : masks.frames[static_cast<std::size_t>(frame)]) out.push_back(m.mask);
  return out;
}

std::vector<int> frame_ids(const InstanceMaskSet& masks, int frame) {
  std::vector<int> out;
  for (const auto& m : masks.frames[static_cast<std::size_t>(frame)]) out.push_back(m.object_id);
  return out;
}

}  // namespace

ad::Var total_loss(ad::Tape& tape, const SequenceSample& sample, const SampleVars& vars, const LossOptions& options,
                   LossBreakdown* breakdown) {
  const LossWeights& w = options.weights;
  const auto objects = sample.masks.middle_objects();
  const bool use_motion = options.motion_model && !objects.empty();

  ad::Var prev = tape.constant(sample.frames[0].field());
  ad::Var mid = tape.constant(sample.frames[1].field());
  ad::Var next = tape.constant(sample.frames[2].field());
  ad::Var depth = vars.depth;
  Intrinsics k = sample.k;
  std::vector<Mask> masks;
  for (const auto* obj : objects) masks.push_back(obj->mask);
  std::vector<int> ids;
  for (const auto* obj : objects) ids.push_back(obj->object_id);
  std::vector<Mask> prev_masks = frame_masks(sample.masks, 0), next_masks = frame_masks(sample.masks, 2);
  const std::vector<int> prev_ids = frame_ids(sample.masks, 0), next_ids = frame_ids(sample.masks, 2);

  ad::Var total = tape.constant(0.0);
  LossBreakdown local;
  for (int s = 0; s < w.scales; ++s) {
    if (s > 0) {
      prev = ad::downsample2(prev);
      mid = ad::downsample2(mid);
      next = ad::downsample2(next);
      depth = ad::downsample2(depth);
      k = k.downsampled();
      for (auto& m : masks) m = downsample_mask(m);
      for (auto& m : prev_masks) m = downsample_mask(m);
      for (auto& m : next_masks) m = downsample_mask(m);
    }
    double rec_value = 0, ssim_value = 0, smooth_value = 0;
    if (w.rec > 0 || w.ssim > 0) {
      WarpVars wp, wn;
      Mask ssim_prev, ssim_next;  // empty: use the warp validity
      if (use_motion) {
        std::vector<ObjectMotionVar> op, on;
        for (std::size_t i = 0; i < objects.size(); ++i) {
          const int id = objects[i]->object_id;
          if (!vars.object_prev.count(id) || !vars.object_next.count(id)) {
            throw ContractViolation("total_loss: missing motion for object " + std::to_string(id));
          }
          op.push_back({&masks[i], vars.object_prev.at(id)});
          on.push_back({&masks[i], vars.object_next.at(id)});
        }
        wp = composite_warp(prev, depth, vars.ego_prev, op, k);
        wn = composite_warp(next, depth, vars.ego_next, on, k);
        if (options.occlusion_masking) {
          const Mask lp = layer_consistent(wp, masks, ids, prev_masks, prev_ids);
          const Mask ln = layer_consistent(wn, masks, ids, next_masks, next_ids);
          ssim_prev = mask_and(wp.validity, erode3(lp));
          ssim_next = mask_and(wn.validity, erode3(ln));
          wp.validity = mask_and(wp.validity, lp);
          wn.validity = mask_and(wn.validity, ln);
        }
      } else {
        wp = inverse_warp(prev, depth, vars.ego_prev, k);
        wn = inverse_warp(next, depth, vars.ego_next, k);
      }
      if (w.rec > 0) {
        bool degenerate = false;
        ad::Var rec = reconstruction_loss(wp, wn, mid, &degenerate);
        if (degenerate) local.warnings.push_back("scale " + std::to_string(s) + ": no valid pixels");
        rec_value = rec.item();
        total = total + rec * w.rec;
      }
      if (w.ssim > 0) {
        ad::Var ssim = (ssim_loss(wp.image, mid, ssim_prev.size() ? ssim_prev : wp.validity) +
                        ssim_loss(wn.image, mid, ssim_next.size() ? ssim_next : wn.validity)) *
                       0.5;
        ssim_value = ssim.item();
        total = total + ssim * w.ssim;
      }
    }
    if (w.smooth > 0) {
      ad::Var smooth = smoothness_loss(depth, mid) * (1.0 / static_cast<double>(1 << s));
      smooth_value = smooth.item();
      total = total + smooth * w.smooth;
    }
    local.rec.push_back(rec_value);
    local.ssim.push_back(ssim_value);
    local.smooth.push_back(smooth_value);
  }
  if (options.size_constraint && w.size > 0 && !objects.empty()) {
    ad::Var size = size_constraint_loss(vars.depth, objects, vars.priors, sample.k, &local.warnings);
    local.size = size.item();
    total = total + size * w.size;
  }
  local.total = total.item();
  if (breakdown) *breakdown = std::move(local);
  return total;
}

// ---- value-level wrappers ---------------------------------------------------

double reconstruction_loss(const WarpResult& prev, const WarpResult& next, const ImageField& target,
                           bool* degenerate) {
  ad::Tape tape;
  WarpVars p{tape.constant(prev.image.field()), prev.validity, {}};
  WarpVars n{tape.constant(next.image.field()), next.validity, {}};
  return reconstruction_loss(p, n, tape.constant(target.field()), degenerate).item();
}

double ssim_loss(const ImageField& a, const ImageField& b, const ValidityMask& validity) {
  if (!a.field().same_shape(b.field())) throw ContractViolation("ssim_loss: shape mismatch");
  ad::Tape tape;
  return ssim_loss(tape.constant(a.field()), tape.constant(b.field()), validity).item();
}

double smoothness_loss(const DepthMap& depth, const ImageField& image) {
  ad::Tape tape;
  return smoothness_loss(tape.constant(depth.field()), tape.constant(image.field())).item();
}

double size_constraint_loss(const DepthMap& depth, const std::vector<InstanceMask>& objects,
                            const HeightPriors& priors, const Intrinsics& k, std::vector<std::string>* warnings) {
  ad::Tape tape;
  std::map<int, ad::Var> prior_vars;
  for (const auto& [cat, p] : priors) {
    if (!(p > 0)) throw InvalidArgument("size constraint: priors must be positive");
    prior_vars[cat] = tape.constant(p);
  }
  std::vector<const InstanceMask*> ptrs;
  for (const auto& o : objects) ptrs.push_back(&o);
  return size_constraint_loss(tape.constant(depth.field()), ptrs, prior_vars, k, warnings).item();
}

}  // namespace mdepth
