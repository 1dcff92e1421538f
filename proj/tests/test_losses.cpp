#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mdepth/errors.hpp"
#include "mdepth/losses.hpp"
#include "mdepth/synthdata.hpp"
#include "mdepth/trainer.hpp"
#include "test_util.hpp"

using namespace mdepth;
using mdepth::testing::random_field;
using mdepth::testing::random_mask;
using mdepth::testing::square_k;

namespace {

WarpResult constant_warp(const Field& target, double offset, const Mask& valid) {
  Field f = target;
  for (auto& v : f.data) v += offset;
  return {ImageField(f), valid, Field(target.height, target.width, 2)};
}

// Independent SSIM: explicit 3x3 windows with replicate padding, one pixel and
// channel at a time.
double ssim_oracle(const Field& a, const Field& b, const Mask& valid) {
  double total = 0;
  std::size_t n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (!valid.at(x, y)) continue;
      for (int c = 0; c < a.channels; ++c) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = std::clamp(x + dx, 0, a.width - 1), yy = std::clamp(y + dy, 0, a.height - 1);
            const double va = a.at(xx, yy, c), vb = b.at(xx, yy, c);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        const double ma = sa / 9, mb = sb / 9;
        const double va = saa / 9 - ma * ma, vb = sbb / 9 - mb * mb, cov = sab / 9 - ma * mb;
        const double ssim = (2 * ma * mb + kSsimC1) * (2 * cov + kSsimC2) /
                            ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
        total += (1 - ssim) / 2;
        ++n;
      }
    }
  return n ? total / n : 0.0;
}

double smoothness_oracle(const Field& d, const Field& img) {
  const int h = d.height, w = d.width;
  double mean_disp = 0;
  for (double v : d.data) mean_disp += 1.0 / v;
  mean_disp /= d.size();
  auto disp = [&](int x, int y) { return 1.0 / d.at(x, y) / mean_disp; };
  auto gray = [&](int x, int y) {
    double s = 0;
    for (int c = 0; c < img.channels; ++c) s += img.at(x, y, c);
    return s / img.channels;
  };
  double total = 0;
  for (int y = 0; y < h - 1; ++y)
    for (int x = 0; x < w - 1; ++x) {
      total += std::abs(disp(x + 1, y) - disp(x, y)) * std::exp(-std::abs(gray(x + 1, y) - gray(x, y)));
      total += std::abs(disp(x, y + 1) - disp(x, y)) * std::exp(-std::abs(gray(x, y + 1) - gray(x, y)));
    }
  return total / ((h - 1) * (w - 1));
}

InstanceMask box_mask(int h, int w, int id, int category, int x0, int y0, int x1, int y1) {
  InstanceMask m{id, category, Mask(h, w)};
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) m.mask.at(x, y) = 1;
  return m;
}

}  // namespace

TEST(ReconstructionLoss, IdenticalWarpsGiveZero) {
  std::mt19937_64 rng(1);
  const Field t = random_field(8, 8, 3, rng, 0.2, 0.8);
  const Mask all(8, 8, 1);
  EXPECT_EQ(reconstruction_loss(constant_warp(t, 0, all), constant_warp(t, 0, all), ImageField(t)), 0.0);
}

TEST(ReconstructionLoss, TakesPerPixelMinimum) {
  const Field t(6, 6, 3, 0.5);
  const Mask all(6, 6, 1);
  EXPECT_NEAR(reconstruction_loss(constant_warp(t, 0.2, all), constant_warp(t, -0.1, all), ImageField(t)), 0.1, 1e-15);
}

TEST(ReconstructionLoss, MatchesBruteForceWithRandomValidity) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Field t = random_field(9, 7, 3, rng);
    const WarpResult p{ImageField(random_field(9, 7, 3, rng)), random_mask(9, 7, rng), Field(9, 7, 2)};
    const WarpResult n{ImageField(random_field(9, 7, 3, rng)), random_mask(9, 7, rng), Field(9, 7, 2)};
    double total = 0;
    int count = 0;
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 7; ++x) {
        double ep = 0, en = 0;
        for (int c = 0; c < 3; ++c) {
          ep += std::abs(p.image.at(x, y, c) - t.at(x, y, c)) / 3;
          en += std::abs(n.image.at(x, y, c) - t.at(x, y, c)) / 3;
        }
        const bool vp = p.validity.at(x, y), vn = n.validity.at(x, y);
        if (vp && vn) total += std::min(ep, en);
        else if (vp) total += ep;
        else if (vn) total += en;
        else continue;
        ++count;
      }
    bool degenerate = true;
    EXPECT_NEAR(reconstruction_loss(p, n, ImageField(t), &degenerate), total / count, 1e-14);
    EXPECT_FALSE(degenerate);
  }
}

TEST(ReconstructionLoss, NoValidPixelIsZeroWithFlag) {
  const Field t(4, 4, 1, 0.3);
  const Mask none(4, 4, 0);
  bool degenerate = false;
  EXPECT_EQ(reconstruction_loss(constant_warp(t, 0.5, none), constant_warp(t, 0.4, none), ImageField(t), &degenerate), 0.0);
  EXPECT_TRUE(degenerate);
}

TEST(SsimLoss, IdenticalImagesGiveZero) {
  std::mt19937_64 rng(3);
  const ImageField a(random_field(8, 8, 3, rng));
  EXPECT_NEAR(ssim_loss(a, a, Mask(8, 8, 1)), 0.0, 1e-12);
}

TEST(SsimLoss, ConstantZeroVersusConstantOne) {
  const ImageField a(Field(5, 5, 1, 0.0)), b(Field(5, 5, 1, 1.0));
  // Means 0 and 1, no variance: SSIM = c1 * c2 / ((1 + c1) * c2).
  const double ssim = (kSsimC1 * kSsimC2) / ((1.0 + kSsimC1) * kSsimC2);
  EXPECT_NEAR(ssim_loss(a, b, Mask(5, 5, 1)), (1 - ssim) / 2, 1e-15);
}

TEST(SsimLoss, MatchesWindowedOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Field a = random_field(7, 10, 3, rng), b = random_field(7, 10, 3, rng);
    const Mask v = random_mask(7, 10, rng, 0.7);
    EXPECT_NEAR(ssim_loss(ImageField(a), ImageField(b), v), ssim_oracle(a, b, v), 1e-8);
  }
}

TEST(SmoothnessLoss, ConstantDepthIsZero) {
  std::mt19937_64 rng(5);
  EXPECT_EQ(smoothness_loss(DepthMap(Field(6, 6, 1, 3.0)), ImageField(random_field(6, 6, 3, rng))), 0.0);
}

TEST(SmoothnessLoss, EdgeAlignedStepCostsLess) {
  Field d(8, 8, 1, 2.0), edge(8, 8, 1, 0.1);
  for (int y = 0; y < 8; ++y)
    for (int x = 4; x < 8; ++x) {
      d.at(x, y) = 6.0;
      edge.at(x, y) = 0.9;
    }
  const double with_edge = smoothness_loss(DepthMap(d), ImageField(edge));
  const double uniform = smoothness_loss(DepthMap(d), ImageField(Field(8, 8, 1, 0.5)));
  EXPECT_GT(with_edge, 0.0);
  EXPECT_LT(with_edge, uniform);
}

TEST(SmoothnessLoss, MatchesBruteForce) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const Field d = random_field(6, 9, 1, rng, 0.5, 20.0), img = random_field(6, 9, 3, rng);
    EXPECT_NEAR(smoothness_loss(DepthMap(d), ImageField(img)), smoothness_oracle(d, img), 1e-12);
  }
}

TEST(ApproxDepth, Examples) {
  EXPECT_DOUBLE_EQ(approx_depth(1.5, 50, Intrinsics{100, 100, 0, 0, 10, 10}), 3.0);
  EXPECT_NEAR(approx_depth(1.6, 80, Intrinsics{721, 721, 0, 0, 10, 10}), 14.42, 1e-12);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.1, 1000.0);
  for (int i = 0; i < 100; ++i) {
    const Intrinsics k{u(rng), u(rng), 0, 0, 10, 10};
    const double p = u(rng);
    const int h = 1 + static_cast<int>(u(rng));
    EXPECT_NEAR(approx_depth(p, 2 * h, k), approx_depth(p, h, k) / 2, 1e-12 * approx_depth(p, h, k));
  }
  EXPECT_THROW(approx_depth(1.0, 0, Intrinsics{}), InvalidArgument);
}

TEST(BlobHeight, BoundingBoxRows) {
  EXPECT_EQ(blob_height(box_mask(20, 20, 1, 0, 3, 4, 5, 13).mask), 10);
  EXPECT_EQ(blob_height(Mask(5, 5, 0)), 0);
}

TEST(SizeConstraintLoss, ExactApproxDepthContributesZero) {
  const Intrinsics k{100, 100, 4.5, 29.5, 10, 60};
  const InstanceMask obj = box_mask(60, 10, 1, 3, 2, 5, 6, 54);  // h = 50
  Field d(60, 10, 1, 11.0);
  for (int y = 5; y <= 54; ++y)
    for (int x = 2; x <= 6; ++x) d.at(x, y) = approx_depth(2.0, 50, k);
  EXPECT_NEAR(size_constraint_loss(DepthMap(d), {obj}, {{3, 2.0}}, k), 0.0, 1e-15);
}

TEST(SizeConstraintLoss, WorkedExample) {
  const Intrinsics k{100, 100, 4.5, 29.5, 10, 60};
  const InstanceMask obj = box_mask(60, 10, 1, 3, 2, 5, 6, 54);
  EXPECT_NEAR(size_constraint_loss(DepthMap(Field(60, 10, 1, 8.0)), {obj}, {{3, 2.0}}, k), 0.5, 1e-15);
}

TEST(SizeConstraintLoss, MatchesPerObjectLoop) {
  std::mt19937_64 rng(8);
  const Intrinsics k{57, 61, 15.5, 11.5, 32, 24};
  for (int trial = 0; trial < 10; ++trial) {
    const Field d = random_field(24, 32, 1, rng, 1.0, 30.0);
    const std::vector<InstanceMask> objs = {box_mask(24, 32, 1, 0, 1, 1, 8, 9), box_mask(24, 32, 2, 1, 12, 3, 20, 20),
                                            box_mask(24, 32, 5, 0, 25, 12, 30, 22)};
    const HeightPriors priors{{0, 1.7}, {1, 0.6}};
    double mean = 0;
    for (double v : d.data) mean += v;
    mean /= d.size();
    double expected = 0;
    for (const auto& o : objs) {
      const double approx = k.fy * priors.at(o.category_id) / blob_height(o.mask);
      double s = 0;
      int n = 0;
      for (std::size_t i = 0; i < d.size(); ++i)
        if (o.mask.data[i]) {
          s += std::abs(d.data[i] / mean - approx / mean);
          ++n;
        }
      expected += s / n;
    }
    EXPECT_NEAR(size_constraint_loss(DepthMap(d), objs, priors, k), expected, 1e-12);
  }
}

TEST(SizeConstraintLoss, InvariantToJointScaling) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> uc(0.05, 20.0);
  const Intrinsics k{40, 40, 7.5, 7.5, 16, 16};
  const std::vector<InstanceMask> objs = {box_mask(16, 16, 1, 0, 2, 2, 6, 12), box_mask(16, 16, 2, 4, 9, 4, 14, 9)};
  for (int trial = 0; trial < 50; ++trial) {
    Field d = random_field(16, 16, 1, rng, 1.0, 10.0);
    HeightPriors priors{{0, 1.2}, {4, 0.4}};
    const double base = size_constraint_loss(DepthMap(d), objs, priors, k);
    const double c = uc(rng);
    for (auto& v : d.data) v *= c;
    for (auto& [cat, p] : priors) p *= c;
    EXPECT_NEAR(size_constraint_loss(DepthMap(d), objs, priors, k), base, 1e-9);
  }
}

TEST(SizeConstraintLoss, MissingPriorAndEmptyMask) {
  const Intrinsics k{40, 40, 3.5, 3.5, 8, 8};
  const InstanceMask obj = box_mask(8, 8, 1, 7, 1, 1, 3, 3);
  EXPECT_THROW(size_constraint_loss(DepthMap(Field(8, 8, 1, 2.0)), {obj}, {{0, 1.0}}, k), ConfigError);
  std::vector<std::string> warnings;
  const InstanceMask empty{2, 0, Mask(8, 8, 0)};
  EXPECT_EQ(size_constraint_loss(DepthMap(Field(8, 8, 1, 2.0)), {empty}, {{0, 1.0}}, k, &warnings), 0.0);
  ASSERT_EQ(warnings.size(), 1u);
}

namespace {

void set_ground_truth(DirectPredictor& p, const synth::LabeledSample& ls) {
  Field ld = ls.truth.depth.field();
  for (auto& v : ld.data) v = std::log(v);
  p.params().at(DirectPredictor::depth_name(ls.sample.name)).value = ld;
  p.params().at(DirectPredictor::ego_name(DirectPredictor::prev_pair(ls.sample))).value = pose_field(ls.truth.ego_prev);
  p.params().at(DirectPredictor::ego_name(DirectPredictor::next_pair(ls.sample))).value = pose_field(ls.truth.ego_next);
  for (const auto& [id, m] : ls.truth.object_prev)
    p.params().at(DirectPredictor::object_name(DirectPredictor::prev_pair(ls.sample), id)).value = pose_field(m);
  for (const auto& [id, m] : ls.truth.object_next)
    p.params().at(DirectPredictor::object_name(DirectPredictor::next_pair(ls.sample), id)).value = pose_field(m);
}

}  // namespace

TEST(TotalLoss, ZeroWeightsGiveZeroLossAndGradients) {
  const synth::LabeledSample ls = synth::make_sample(synth::dynamic_scene(1, 32), 1, "w");
  TrainConfig cfg;
  cfg.loss.weights = {0, 0, 0, 0, 4};
  DirectPredictor p;
  p.register_sample(ls.sample, cfg.init);
  const double loss = ad::value_and_grad(
      [&](ad::Tape& t, ad::ParamSet&) { return total_loss(t, ls.sample, p.bind_sample(t, ls.sample, cfg.loss), cfg.loss); },
      p.params());
  EXPECT_EQ(loss, 0.0);
  for (const auto& [name, prm] : p.params())
    for (double g : prm.grad.data) EXPECT_EQ(g, 0.0) << name;
}

TEST(TotalLoss, GroundTruthReconstructsAlmostPerfectly) {
  // At 128 px the coarsest of the four scales is 16 x 16; below that the
  // 2 x 2 averaged texture aliases and no depth reproduces it.
  for (std::uint64_t seed : {1, 2, 3}) {
    const synth::LabeledSample ls = synth::make_sample(synth::standard_scene(seed, 128), 1, "w");
    TrainConfig cfg;
    cfg.loss.weights = {1, 0, 0, 0, 4};
    DirectPredictor p;
    p.register_sample(ls.sample, cfg.init);
    set_ground_truth(p, ls);
    LossBreakdown b;
    EXPECT_LT(evaluate_loss(ls.sample, p, cfg, &b), 1e-3) << b.describe();
  }
}

TEST(TotalLoss, GroundTruthObjectMotionReconstructsFullScale) {
  const synth::LabeledSample ls = synth::make_sample(synth::dynamic_scene(2, 64), 1, "w");
  TrainConfig cfg;
  cfg.loss.weights = {1, 0, 0, 0, 1};
  DirectPredictor p;
  p.register_sample(ls.sample, cfg.init);
  set_ground_truth(p, ls);
  LossBreakdown b;
  const double with_motion = evaluate_loss(ls.sample, p, cfg, &b);
  EXPECT_LT(with_motion, 1e-3) << b.describe();
  // Without the object motions the object region cannot be explained.
  cfg.loss.motion_model = false;
  EXPECT_GT(evaluate_loss(ls.sample, p, cfg), 10 * with_motion);
}

TEST(TotalLoss, TermsAreBounded) {
  std::mt19937_64 rng(10);
  const synth::LabeledSample ls = synth::make_sample(synth::dynamic_scene(4, 32), 1, "w");
  TrainConfig cfg;
  DirectPredictor p;
  p.register_sample(ls.sample, cfg.init);
  std::normal_distribution<double> n(0.0, 0.3);
  for (int trial = 0; trial < 5; ++trial) {
    for (auto& [name, prm] : p.params())
      if (name.rfind("prior/", 0) != 0)
        for (auto& v : prm.value.data) v += n(rng);
    LossBreakdown b;
    evaluate_loss(ls.sample, p, cfg, &b);
    for (std::size_t s = 0; s < b.rec.size(); ++s) {
      EXPECT_GE(b.rec[s], 0.0);
      EXPECT_LE(b.rec[s], 1.0);
      EXPECT_GE(b.ssim[s], 0.0);
      EXPECT_LE(b.ssim[s], 1.0);
      EXPECT_GE(b.smooth[s], 0.0);
    }
    EXPECT_GE(b.size, 0.0);
  }
}

TEST(TotalLoss, PriorsGetZeroGradientWithoutObjects) {
  const synth::LabeledSample ls = synth::make_sample(synth::standard_scene(3, 32), 1, "w");
  TrainConfig cfg;
  DirectPredictor p;
  p.register_sample(ls.sample, cfg.init);
  p.register_category(0, 1.3, true);
  p.register_category(2, 0.7, true);
  ad::value_and_grad(
      [&](ad::Tape& t, ad::ParamSet& ps) {
        SampleVars v = p.bind_sample(t, ls.sample, cfg.loss);
        v.priors[0] = t.parameter(ps, DirectPredictor::prior_name(0));
        v.priors[2] = t.parameter(ps, DirectPredictor::prior_name(2));
        return total_loss(t, ls.sample, v, cfg.loss);
      },
      p.params());
  EXPECT_EQ(p.params().at(DirectPredictor::prior_name(0)).grad.data[0], 0.0);
  EXPECT_EQ(p.params().at(DirectPredictor::prior_name(2)).grad.data[0], 0.0);
}

TEST(TotalLoss, DecreasesOverFirstFiftySteps) {
  const synth::LabeledSample ls = synth::make_sample(synth::standard_scene(1, 64), 1, "w");
  TrainConfig cfg;
  DirectPredictor p;
  p.register_sample(ls.sample, cfg.init);
  auto opt = make_optimizer(cfg);
  std::vector<double> losses;
  for (int i = 0; i < 51; ++i) losses.push_back(train_step(ls.sample, p, *opt, cfg).loss);
  int increases = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) increases += losses[i] > losses[i - 1];
  EXPECT_LE(increases, 5);
  EXPECT_LT(losses.back(), losses.front());
}

TEST(LossWeights, RejectsNegativeWeights) {
  LossWeights w;
  w.ssim = -0.1;
  EXPECT_THROW(w.validate(), ConfigError);
  w = LossWeights{};
  w.scales = 0;
  EXPECT_THROW(w.validate(), ConfigError);
}
