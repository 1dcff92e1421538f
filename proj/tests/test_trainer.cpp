#include <gtest/gtest.h>

#include <cmath>

#include "mdepth/errors.hpp"
#include "mdepth/metrics.hpp"
#include "mdepth/synthdata.hpp"
#include "mdepth/trainer.hpp"

using namespace mdepth;

namespace {

ad::ScalarFunction square(const std::string& name) {
  return [name](ad::Tape& t, ad::ParamSet& p) {
    ad::Var x = t.parameter(p, name);
    return ad::sum(x * x);
  };
}

TrainConfig quick_config(int steps) {
  TrainConfig c;
  c.learning_rate = 0.01;
  c.steps = steps;
  c.loss.weights.scales = 1;
  c.loss.weights.smooth = 0.001;
  return c;
}

double pose_norm(const Pose6& p) {
  double s = 0;
  for (double v : p.as_array()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST(Sgd, OneStepOnSquare) {
  ad::ParamSet p;
  p.add("x", Field::scalar(3.0));
  Sgd sgd(0.1);
  EXPECT_EQ(optimize_step(square("x"), p, sgd), 9.0);
  EXPECT_NEAR(p.at("x").value.data[0], 2.4, 1e-15);
}

TEST(Adam, MatchesThreeStepHandRecursion) {
  ad::ParamSet p;
  p.add("x", Field::scalar(1.0));
  Adam adam(0.1, 0.9, 0.999, 1e-8);
  // x -= lr * mhat / (sqrt(vhat) + eps), computed by hand for f = x^2.
  const double expected[] = {0.9000000005, 0.8004122286917928, 0.7015862729460303};
  for (double e : expected) {
    optimize_step(square("x"), p, adam);
    EXPECT_NEAR(p.at("x").value.data[0], e, 1e-14);
  }
  EXPECT_EQ(adam.iterations(), 3);
}

TEST(Optimizers, FrozenParametersAreUntouched) {
  ad::ParamSet p;
  p.add("x", Field::scalar(2.0));
  p.add("y", Field::scalar(2.0), false);
  auto f = [](ad::Tape& t, ad::ParamSet& ps) {
    ad::Var x = t.parameter(ps, "x"), y = t.parameter(ps, "y");
    return ad::sum(x * y);
  };
  Adam adam(0.1, 0.9, 0.999, 1e-8);
  optimize_step(f, p, adam);
  EXPECT_EQ(p.at("y").value.data[0], 2.0);
  EXPECT_NE(p.at("x").value.data[0], 2.0);
}

TEST(Schedule, CosineFromRateToFinalScale) {
  TrainConfig c;
  c.learning_rate = 1.0;
  c.lr_final_scale = 0.1;
  EXPECT_NEAR(scheduled_learning_rate(c, 0, 3), 1.0, 1e-15);
  EXPECT_NEAR(scheduled_learning_rate(c, 1, 3), 0.55, 1e-15);
  EXPECT_NEAR(scheduled_learning_rate(c, 2, 3), 0.1, 1e-15);
  c.lr_final_scale = 1.0;
  EXPECT_EQ(scheduled_learning_rate(c, 7, 10), 1.0);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.steps = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.beta1 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.init.depth_init = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainStep, ZeroLearningRateKeepsParameters) {
  const auto ls = synth::make_sample(synth::dynamic_scene(1, 32), 1, "w");
  TrainConfig c = quick_config(1);
  c.learning_rate = 0;
  DirectPredictor p;
  p.register_sample(ls.sample, c.init);
  const ad::ParamSet before = p.params();
  auto opt = make_optimizer(c);
  const StepResult r = train_step(ls.sample, p, *opt, c);
  EXPECT_GT(r.loss, 0.0);
  for (const auto& [name, prm] : p.params()) EXPECT_EQ(prm.value.data, before.at(name).value.data) << name;
}

TEST(TrainStep, NonFiniteLossIsNumericErrorWithBreakdown) {
  auto ls = synth::make_sample(synth::dynamic_scene(1, 16), 1, "w");
  TrainConfig c = quick_config(1);
  DirectPredictor p;
  p.register_sample(ls.sample, c.init);
  p.params().at(DirectPredictor::prior_name(1)).value.data[0] = std::nan("");
  auto opt = make_optimizer(c);
  try {
    train_step(ls.sample, p, *opt, c);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("size="), std::string::npos) << e.what();
  }
}

TEST(TrainStep, NonFinitePoseDoesNotCrash) {
  auto ls = synth::make_sample(synth::static_scene(1, 16), 1, "w");
  TrainConfig c = quick_config(1);
  DirectPredictor p;
  p.register_sample(ls.sample, c.init);
  p.params().at(DirectPredictor::ego_name("w/next")).value.data[0] = std::nan("");
  auto opt = make_optimizer(c);
  try {
    train_step(ls.sample, p, *opt, c);
  } catch (const NumericError&) {
  }
}

TEST(Fit, AdamReducesLossTenfoldOnStandardScene) {
  const auto ls = synth::make_sample(synth::standard_scene(1, 64), 1, "w");
  TrainConfig c = quick_config(500);
  DirectPredictor p;
  const FitResult r = fit({ls.sample}, p, c);
  ASSERT_EQ(r.trace.size(), 500u);
  EXPECT_LT(evaluate_loss(ls.sample, p, c), 0.1 * r.trace.front().loss);
}

TEST(Fit, DeterministicTrace) {
  std::vector<SequenceSample> data;
  for (int i = 1; i <= 3; ++i) data.push_back(synth::make_sample(synth::dynamic_scene(i, 16), 1, "s" + std::to_string(i)).sample);
  TrainConfig c = quick_config(20);
  c.seed = 9;
  DirectPredictor a, b;
  const FitResult ra = fit(data, a, c), rb = fit(data, b, c);
  ASSERT_EQ(ra.trace.size(), rb.trace.size());
  for (std::size_t i = 0; i < ra.trace.size(); ++i) {
    EXPECT_EQ(ra.trace[i].loss, rb.trace[i].loss);
    EXPECT_EQ(ra.trace[i].sample, rb.trace[i].sample);
  }
  for (const auto& [name, prm] : a.params()) EXPECT_EQ(prm.value.data, b.params().at(name).value.data);
}

TEST(Fit, ZeroStepsKeepsInitialisation) {
  const auto ls = synth::make_sample(synth::dynamic_scene(1, 16), 1, "w");
  TrainConfig c = quick_config(0);
  DirectPredictor fitted, fresh;
  EXPECT_TRUE(fit({ls.sample}, fitted, c).trace.empty());
  fresh.register_sample(ls.sample, c.init);
  for (const auto& [name, prm] : fresh.params()) EXPECT_EQ(prm.value.data, fitted.params().at(name).value.data);
}

TEST(Fit, SingleSampleMatchesRepeatedTrainStep) {
  const auto ls = synth::make_sample(synth::dynamic_scene(2, 16), 1, "w");
  TrainConfig c = quick_config(5);
  DirectPredictor fitted, manual;
  const FitResult r = fit({ls.sample}, fitted, c);
  manual.register_sample(ls.sample, c.init);
  auto opt = make_optimizer(c);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(train_step(ls.sample, manual, *opt, c).loss, r.trace[i].loss);
}

TEST(Fit, EmptyDatasetRejected) {
  DirectPredictor p;
  EXPECT_THROW(fit({}, p, quick_config(1)), InvalidArgument);
}

TEST(Fit, DivergenceGuardTrips) {
  // With a zero rate the loss stays at its initial value, which a factor
  // below one counts as diverged.
  const auto ls = synth::make_sample(synth::standard_scene(1, 16), 1, "w");
  TrainConfig c = quick_config(200);
  c.learning_rate = 0;
  c.divergence_factor = 0.5;
  c.divergence_patience = 3;
  DirectPredictor p;
  std::vector<int> seen;
  EXPECT_THROW(fit({ls.sample}, p, c, [&](const TraceEntry& e) { seen.push_back(e.step); }), NumericError);
  EXPECT_EQ(seen.size(), 3u);
  c.divergence_factor = 1.0;
  EXPECT_NO_THROW(fit({ls.sample}, p, c));
  c.divergence_patience = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Fit, StaticObjectMotionConvergesToZero) {
  // A single monocular window leaves the background scale free, and any
  // mismatch with the object's scale shows up as object motion. Holding ego
  // motion at its true value and the height prior at the true height fixes
  // both scales.
  for (std::uint64_t seed : {1, 2, 3}) {
    synth::SceneSpec s = synth::dynamic_scene(seed, 32);
    s.objects[0].velocity.setZero();
    const auto ls = synth::make_sample(s, 1, "w");
    TrainConfig c = quick_config(800);
    c.lr_final_scale = 0.01;
    c.init.train_priors = false;
    c.init.prior_overrides[s.objects[0].category_id] = s.objects[0].height;
    DirectPredictor p;
    p.register_sample(ls.sample, c.init);
    for (const auto& [pair, truth] : {std::pair{"w/prev", ls.truth.ego_prev}, std::pair{"w/next", ls.truth.ego_next}}) {
      ad::Param& e = p.params().at(DirectPredictor::ego_name(pair));
      e.value = pose_field(truth);
      e.trainable = false;
    }
    fit({ls.sample}, p, c);
    EXPECT_LT(pose_norm(p.object_motion("w/prev", 1)), 0.05) << "seed " << seed;
    EXPECT_LT(pose_norm(p.object_motion("w/next", 1)), 0.05) << "seed " << seed;
  }
}

TEST(OnlineRefine, ZeroStepsIsPureInference) {
  std::vector<SequenceSample> stream;
  for (const auto& ls : synth::make_stream([] {
         auto s = synth::standard_scene(2, 16);
         s.frame_count = 5;
         return s;
       }(), "s"))
    stream.push_back(ls.sample);
  TrainConfig c = quick_config(0);
  c.refine_steps = 0;
  const ModelState start = fresh_state(c, 16, 16);
  const RefineResult r = online_refine(stream, start, c);
  ASSERT_EQ(r.windows.size(), 3u);
  for (const auto& w : r.windows) {
    for (double d : w.depth.field().data) EXPECT_NEAR(d, c.init.depth_init, 1e-12);
    EXPECT_EQ(w.loss_before, w.loss_after);
  }
  EXPECT_EQ(r.state.log_depth.data, start.log_depth.data);
}

TEST(OnlineRefine, CarryAndResetPolicies) {
  auto spec = synth::standard_scene(3, 16);
  spec.frame_count = 4;
  std::vector<SequenceSample> stream;
  for (const auto& ls : synth::make_stream(spec, "s")) stream.push_back(ls.sample);
  TrainConfig c = quick_config(0);
  c.refine_steps = 5;
  const ModelState start = fresh_state(c, 16, 16);

  c.reset_policy = ResetPolicy::reset;
  const RefineResult reset = online_refine(stream, start, c);
  EXPECT_EQ(reset.state.log_depth.data, start.log_depth.data);
  // Each window starts from the same weights, so refining window 2 alone gives the same output.
  const RefineResult alone = online_refine({stream[1]}, start, c);
  EXPECT_EQ(reset.windows[1].depth.field().data, alone.windows[0].depth.field().data);

  c.reset_policy = ResetPolicy::carry;
  const RefineResult carry = online_refine(stream, start, c);
  EXPECT_EQ(carry.windows[0].depth.field().data, reset.windows[0].depth.field().data);
  EXPECT_NE(carry.windows[1].depth.field().data, reset.windows[1].depth.field().data);
  EXPECT_NE(carry.state.log_depth.data, start.log_depth.data);
}

TEST(OnlineRefine, SmallStepsDoNotIncreaseWindowLoss) {
  auto spec = synth::standard_scene(4, 16);
  std::vector<SequenceSample> stream{synth::make_sample(spec, 1, "w").sample};
  TrainConfig c = quick_config(0);
  c.optimizer = OptimizerKind::sgd;
  c.learning_rate = 0.1;
  c.refine_steps = 3;
  const RefineResult r = online_refine(stream, fresh_state(c, 16, 16), c);
  EXPECT_LE(r.windows[0].loss_after, r.windows[0].loss_before);
}

TEST(OnlineRefine, ResolutionMismatchIsDataError) {
  std::vector<SequenceSample> stream{synth::make_sample(synth::standard_scene(1, 16), 1, "w").sample};
  TrainConfig c = quick_config(0);
  EXPECT_THROW(online_refine(stream, fresh_state(c, 8, 8), c), DataError);
}

TEST(PretrainedState, AveragesTrainedFields) {
  TrainConfig c = quick_config(0);
  DirectPredictor p;
  p.register_frame("a", Field(2, 2, 1, 1.0));
  p.register_frame("b", Field(2, 2, 1, 3.0));
  p.register_pair("a/prev", Pose6{0.2, 0, 0, 0, 0, 0});
  p.register_pair("a/next", Pose6{});
  p.register_pair("b/prev", Pose6{0.4, 0, 0, 0, 0, 0});
  p.register_pair("b/next", Pose6{});
  const ModelState s = pretrained_state(p, c, 2, 2);
  for (double v : s.log_depth.data) EXPECT_EQ(v, 2.0);
  EXPECT_NEAR(s.ego_prev.tx, 0.3, 1e-15);
  EXPECT_THROW(pretrained_state(p, c, 3, 3), DataError);
}
