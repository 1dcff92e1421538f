#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mdepth/diffengine.hpp"
#include "mdepth/losses.hpp"
#include "mdepth/predictors.hpp"

namespace mdepth {

enum class OptimizerKind { sgd, adam };
enum class ResetPolicy { carry, reset };

struct TrainConfig {
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Cosine anneal from learning_rate to learning_rate * lr_final_scale over a
  // run (fit steps, or refine steps per window). 1 keeps the rate constant.
  double lr_final_scale = 1.0;
  int steps = 0;
  LossOptions loss;
  PredictorInit init;
  std::uint64_t seed = 0;
  int refine_steps = 20;
  ResetPolicy reset_policy = ResetPolicy::carry;
  // Divergence guard: abort when the loss stays above factor x initial for
  // this many consecutive steps.
  double divergence_factor = 10.0;
  int divergence_patience = 50;

  void validate() const;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // Applies one update to every trainable parameter from its current gradient.
  virtual void step(ad::ParamSet& params) = 0;
  virtual void set_learning_rate(double lr) = 0;
};

double scheduled_learning_rate(const TrainConfig& cfg, int step, int total);

class Sgd : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(ad::ParamSet& params) override;
  void set_learning_rate(double lr) override { lr_ = lr; }

 private:
  double lr_;
};

// Bias-corrected Adam with per-parameter first/second moment state.
class Adam : public Optimizer {
 public:
  Adam(double lr, double beta1, double beta2, double epsilon) : lr_(lr), b1_(beta1), b2_(beta2), eps_(epsilon) {}
  void step(ad::ParamSet& params) override;
  void set_learning_rate(double lr) override { lr_ = lr; }
  long iterations() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg);

// Loss, backward, update. Returns the loss evaluated before the update.
double optimize_step(const ad::ScalarFunction& f, ad::ParamSet& params, Optimizer& optimizer);

struct StepResult {
  double loss = 0;
  LossBreakdown breakdown;
};

// One optimizer update on a window. Throws NumericError (with the per-term
// breakdown in the message) when the loss is not finite.
StepResult train_step(const SequenceSample& sample, DirectPredictor& predictor, Optimizer& optimizer,
                      const TrainConfig& cfg);

// total_loss of a window at the current parameters, no update.
double evaluate_loss(const SequenceSample& sample, DirectPredictor& predictor, const TrainConfig& cfg,
                     LossBreakdown* breakdown = nullptr);

struct TraceEntry {
  int step = 0;
  std::string sample;
  double loss = 0;
};

struct FitResult {
  std::vector<TraceEntry> trace;
};

// cfg.steps updates, visiting samples in a seeded shuffled order (reshuffled
// every pass). Registers every sample with cfg.init first.
FitResult fit(const std::vector<SequenceSample>& dataset, DirectPredictor& predictor, const TrainConfig& cfg,
              const std::function<void(const TraceEntry&)>& on_step = {});

// Weights carried between refinement windows: what a predictor emits for a
// frame it has not seen.
struct ModelState {
  Field log_depth;
  Pose6 ego_prev;
  Pose6 ego_next;
  std::map<int, double> priors;
};

ModelState fresh_state(const TrainConfig& cfg, int height, int width);
// Mean log-depth field and mean ego motions over every window the predictor
// was trained on; learned priors are kept.
ModelState pretrained_state(const DirectPredictor& predictor, const TrainConfig& cfg, int height, int width);

struct WindowResult {
  std::string name;
  DepthMap depth;  // middle frame after refinement
  Pose6 ego_prev;
  Pose6 ego_next;
  double loss_before = 0;
  double loss_after = 0;
};

struct RefineResult {
  std::vector<WindowResult> windows;
  ModelState state;  // weights after the last window
};

// For each window in order: start from the current state, run
// cfg.refine_steps updates on that window alone, emit the middle-frame depth,
// then carry the refined weights forward or fall back to `start`.
RefineResult online_refine(const std::vector<SequenceSample>& stream, const ModelState& start, const TrainConfig& cfg);

}  // namespace mdepth
