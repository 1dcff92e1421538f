#include "mdepth/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mdepth/errors.hpp"

namespace mdepth {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw ConfigError("train: learning rate must be >= 0");
  if (!(lr_final_scale >= 0) || !std::isfinite(lr_final_scale)) throw ConfigError("train: lr_final_scale must be >= 0");
  if (steps < 0 || refine_steps < 0) throw ConfigError("train: step counts must be non-negative");
  if (!(divergence_factor > 0) || divergence_patience < 1) {
    throw ConfigError("train: divergence_factor must be > 0 and divergence_patience >= 1");
  }
  if (optimizer == OptimizerKind::adam) {
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(epsilon > 0)) {
      throw ConfigError("train: invalid Adam hyperparameters");
    }
  }
  if (!(init.depth_init > 0) || !(init.prior_init > 0)) throw ConfigError("train: initial depth and prior must be > 0");
  loss.weights.validate();
}

void Sgd::step(ad::ParamSet& params) {
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value.data[i] -= lr_ * p.grad.data[i];
  }
}

void Adam::step(ad::ParamSet& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    Moments& s = state_[name];
    if (s.m.size() != p.value.size()) {
      s.m.assign(p.value.size(), 0.0);
      s.v.assign(p.value.size(), 0.0);
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data[i];
      s.m[i] = b1_ * s.m[i] + (1 - b1_) * g;
      s.v[i] = b2_ * s.v[i] + (1 - b2_) * g * g;
      const double mhat = s.m[i] / c1;
      const double vhat = s.v[i] / c2;
      p.value.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

double scheduled_learning_rate(const TrainConfig& cfg, int step, int total) {
  if (cfg.lr_final_scale == 1.0 || total <= 1) return cfg.learning_rate;
  const double progress = static_cast<double>(step) / (total - 1);
  const double factor = cfg.lr_final_scale + (1 - cfg.lr_final_scale) * 0.5 * (1 + std::cos(M_PI * progress));
  return cfg.learning_rate * factor;
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg) {
  if (cfg.optimizer == OptimizerKind::sgd) return std::make_unique<Sgd>(cfg.learning_rate);
  return std::make_unique<Adam>(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
}

double optimize_step(const ad::ScalarFunction& f, ad::ParamSet& params, Optimizer& optimizer) {
  const double loss = ad::value_and_grad(f, params);
  optimizer.step(params);
  return loss;
}

double evaluate_loss(const SequenceSample& sample, DirectPredictor& predictor, const TrainConfig& cfg,
                     LossBreakdown* breakdown) {
  ad::Tape tape;
  SampleVars vars = predictor.bind_sample(tape, sample, cfg.loss);
  return total_loss(tape, sample, vars, cfg.loss, breakdown).item();
}

StepResult train_step(const SequenceSample& sample, DirectPredictor& predictor, Optimizer& optimizer,
                      const TrainConfig& cfg) {
  StepResult result;
  ad::ParamSet& params = predictor.params();
  params.zero_grad();
  {
    ad::Tape tape;
    SampleVars vars = predictor.bind_sample(tape, sample, cfg.loss);
    ad::Var loss = total_loss(tape, sample, vars, cfg.loss, &result.breakdown);
    result.loss = loss.item();
    if (!std::isfinite(result.loss)) {
      throw NumericError("non-finite loss on window " + sample.name + "\n" + result.breakdown.describe());
    }
    tape.backward(loss);
  }
  optimizer.step(params);
  return result;
}

FitResult fit(const std::vector<SequenceSample>& dataset, DirectPredictor& predictor, const TrainConfig& cfg,
              const std::function<void(const TraceEntry&)>& on_step) {
  cfg.validate();
  if (dataset.empty()) throw InvalidArgument("fit: empty dataset");
  for (const auto& s : dataset) {
    s.validate();
    predictor.register_sample(s, cfg.init);
  }
  auto optimizer = make_optimizer(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  std::size_t cursor = order.size();

  FitResult result;
  double initial = 0;
  int over = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const SequenceSample& sample = dataset[order[cursor++]];
    optimizer->set_learning_rate(scheduled_learning_rate(cfg, step, cfg.steps));
    StepResult r = train_step(sample, predictor, *optimizer, cfg);
    TraceEntry e{step, sample.name, r.loss};
    result.trace.push_back(e);
    if (on_step) on_step(e);
    if (step == 0) initial = r.loss;
    over = r.loss > cfg.divergence_factor * initial ? over + 1 : 0;
    if (over >= cfg.divergence_patience) {
      throw NumericError("divergence: loss above " + std::to_string(cfg.divergence_factor) + "x its initial value for " +
                         std::to_string(over) + " steps\n" + r.breakdown.describe());
    }
  }
  return result;
}

ModelState fresh_state(const TrainConfig& cfg, int height, int width) {
  ModelState s;
  s.log_depth = Field(height, width, 1, std::log(cfg.init.depth_init));
  for (const auto& [cat, p] : cfg.init.prior_overrides) s.priors[cat] = p;
  return s;
}

ModelState pretrained_state(const DirectPredictor& predictor, const TrainConfig& cfg, int height, int width) {
  ModelState s = fresh_state(cfg, height, width);
  const auto frames = predictor.frame_ids();
  if (frames.empty()) return s;
  std::fill(s.log_depth.data.begin(), s.log_depth.data.end(), 0.0);
  std::array<double, 6> prev{}, next{};
  std::size_t pairs = 0;
  for (const auto& f : frames) {
    const Field& field = predictor.params().at(DirectPredictor::depth_name(f)).value;
    if (field.height != height || field.width != width) {
      throw DataError("pretrained depth field " + f + " does not match the stream resolution");
    }
    for (std::size_t i = 0; i < field.size(); ++i) s.log_depth.data[i] += field.data[i] / frames.size();
    const std::string p = DirectPredictor::ego_name(f + "/prev"), n = DirectPredictor::ego_name(f + "/next");
    if (predictor.params().contains(p) && predictor.params().contains(n)) {
      const auto a = predictor.ego(f + "/prev").as_array();
      const auto b = predictor.ego(f + "/next").as_array();
      for (int i = 0; i < 6; ++i) {
        prev[static_cast<std::size_t>(i)] += a[static_cast<std::size_t>(i)];
        next[static_cast<std::size_t>(i)] += b[static_cast<std::size_t>(i)];
      }
      ++pairs;
    }
  }
  if (pairs > 0) {
    for (auto& v : prev) v /= static_cast<double>(pairs);
    for (auto& v : next) v /= static_cast<double>(pairs);
    s.ego_prev = Pose6::from_array(prev);
    s.ego_next = Pose6::from_array(next);
  }
  for (int cat : predictor.categories()) s.priors[cat] = predictor.prior(cat);
  return s;
}

namespace {

DirectPredictor instantiate(const SequenceSample& sample, const ModelState& state, const TrainConfig& cfg) {
  DirectPredictor p;
  p.register_frame(DirectPredictor::frame_id(sample), state.log_depth);
  p.register_pair(DirectPredictor::prev_pair(sample), state.ego_prev);
  p.register_pair(DirectPredictor::next_pair(sample), state.ego_next);
  PredictorInit init = cfg.init;
  for (const auto& [cat, prior] : state.priors) init.prior_overrides[cat] = prior;
  p.register_sample(sample, init);
  return p;
}

}  // namespace

RefineResult online_refine(const std::vector<SequenceSample>& stream, const ModelState& start, const TrainConfig& cfg) {
  cfg.validate();
  RefineResult result;
  ModelState state = start;
  for (const SequenceSample& sample : stream) {
    sample.validate();
    if (sample.k.height != state.log_depth.height || sample.k.width != state.log_depth.width) {
      throw DataError("online_refine: window " + sample.name + " does not match the model resolution");
    }
    DirectPredictor predictor = instantiate(sample, state, cfg);
    auto optimizer = make_optimizer(cfg);
    WindowResult w;
    w.name = sample.name;
    w.loss_before = evaluate_loss(sample, predictor, cfg);
    for (int i = 0; i < cfg.refine_steps; ++i) {
      optimizer->set_learning_rate(scheduled_learning_rate(cfg, i, cfg.refine_steps));
      train_step(sample, predictor, *optimizer, cfg);
    }
    w.loss_after = cfg.refine_steps > 0 ? evaluate_loss(sample, predictor, cfg) : w.loss_before;
    w.depth = predictor.depth(DirectPredictor::frame_id(sample));
    w.ego_prev = predictor.ego(DirectPredictor::prev_pair(sample));
    w.ego_next = predictor.ego(DirectPredictor::next_pair(sample));
    if (cfg.reset_policy == ResetPolicy::carry) {
      state.log_depth = predictor.params().at(DirectPredictor::depth_name(sample.name)).value;
      state.ego_prev = w.ego_prev;
      state.ego_next = w.ego_next;
      for (int cat : predictor.categories()) state.priors[cat] = predictor.prior(cat);
    }
    result.windows.push_back(std::move(w));
  }
  result.state = state;
  return result;
}

}  // namespace mdepth
