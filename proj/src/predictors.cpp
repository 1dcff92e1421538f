#include "mdepth/predictors.hpp"

#include <cmath>
#include <set>

#include "mdepth/errors.hpp"

namespace mdepth {

void DirectPredictor::register_frame(const std::string& frame_id, int height, int width, double depth_init) {
  if (!(depth_init > 0)) throw InvalidArgument("depth initialization must be positive");
  register_frame(frame_id, Field(height, width, 1, std::log(depth_init)));
}

void DirectPredictor::register_frame(const std::string& frame_id, Field log_depth) {
  if (log_depth.channels != 1) throw InvalidArgument("log-depth field must have one channel");
  const std::string name = depth_name(frame_id);
  if (params_.contains(name)) return;
  params_.add(name, std::move(log_depth));
}

void DirectPredictor::register_pair(const std::string& pair_id, const Pose6& init) {
  const std::string name = ego_name(pair_id);
  if (!params_.contains(name)) params_.add(name, pose_field(init));
}

void DirectPredictor::register_object(const std::string& pair_id, int object_id, const Pose6& init) {
  const std::string name = object_name(pair_id, object_id);
  if (!params_.contains(name)) params_.add(name, pose_field(init));
}

void DirectPredictor::register_category(int category_id, double prior, bool trainable) {
  if (!(prior > 0)) throw InvalidArgument("height prior must be positive");
  const std::string name = prior_name(category_id);
  if (!params_.contains(name)) params_.add(name, Field::scalar(prior), trainable);
}

void DirectPredictor::register_sample(const SequenceSample& sample, const PredictorInit& init) {
  register_frame(frame_id(sample), sample.k.height, sample.k.width, init.depth_init);
  register_pair(prev_pair(sample));
  register_pair(next_pair(sample));
  for (const auto* obj : sample.masks.middle_objects()) {
    register_object(prev_pair(sample), obj->object_id);
    register_object(next_pair(sample), obj->object_id);
    auto it = init.prior_overrides.find(obj->category_id);
    register_category(obj->category_id, it == init.prior_overrides.end() ? init.prior_init : it->second,
                      init.train_priors);
  }
}

ad::Var DirectPredictor::lookup(ad::Tape& tape, const std::string& name, const char* what) {
  if (!params_.contains(name)) throw LookupError(std::string("unknown ") + what + ": " + name);
  return tape.parameter(params_, name);
}

ad::Var DirectPredictor::predict_depth(ad::Tape& tape, const std::string& frame_id) {
  return ad::exp(lookup(tape, depth_name(frame_id), "frame"));
}

ad::Var DirectPredictor::predict_ego(ad::Tape& tape, const std::string& pair_id) {
  return lookup(tape, ego_name(pair_id), "frame pair");
}

ad::Var DirectPredictor::predict_object_motion(ad::Tape& tape, const std::string& pair_id, int object_id) {
  return lookup(tape, object_name(pair_id, object_id), "object");
}

ad::Var DirectPredictor::predict_prior(ad::Tape& tape, int category_id) {
  return lookup(tape, prior_name(category_id), "category");
}

SampleVars DirectPredictor::bind_sample(ad::Tape& tape, const SequenceSample& sample, const LossOptions& options) {
  SampleVars vars;
  vars.depth = predict_depth(tape, frame_id(sample));
  vars.ego_prev = predict_ego(tape, prev_pair(sample));
  vars.ego_next = predict_ego(tape, next_pair(sample));
  const auto objects = sample.masks.middle_objects();
  if (options.motion_model) {
    for (const auto* obj : objects) {
      vars.object_prev[obj->object_id] = predict_object_motion(tape, prev_pair(sample), obj->object_id);
      vars.object_next[obj->object_id] = predict_object_motion(tape, next_pair(sample), obj->object_id);
    }
  }
  if (options.size_constraint) {
    for (const auto* obj : objects) {
      if (!vars.priors.count(obj->category_id)) vars.priors[obj->category_id] = predict_prior(tape, obj->category_id);
    }
  }
  return vars;
}

DepthMap DirectPredictor::depth(const std::string& frame_id) const {
  const std::string name = depth_name(frame_id);
  if (!params_.contains(name)) throw LookupError("unknown frame: " + frame_id);
  Field f = params_.at(name).value;
  for (double& v : f.data) v = std::exp(v);
  return DepthMap(std::move(f));
}

Pose6 DirectPredictor::ego(const std::string& pair_id) const {
  const std::string name = ego_name(pair_id);
  if (!params_.contains(name)) throw LookupError("unknown frame pair: " + pair_id);
  return pose_from_field(params_.at(name).value);
}

Pose6 DirectPredictor::object_motion(const std::string& pair_id, int object_id) const {
  const std::string name = object_name(pair_id, object_id);
  if (!params_.contains(name)) throw LookupError("unknown object: " + name);
  return pose_from_field(params_.at(name).value);
}

double DirectPredictor::prior(int category_id) const {
  const std::string name = prior_name(category_id);
  if (!params_.contains(name)) throw LookupError("unknown category: " + std::to_string(category_id));
  return params_.at(name).value.data[0];
}

bool DirectPredictor::has_frame(const std::string& frame_id) const { return params_.contains(depth_name(frame_id)); }

std::vector<std::string> DirectPredictor::frame_ids() const {
  std::vector<std::string> out;
  for (const auto& [name, p] : params_) {
    if (name.rfind("depth/", 0) == 0) out.push_back(name.substr(6));
  }
  return out;
}

std::vector<int> DirectPredictor::categories() const {
  std::vector<int> out;
  for (const auto& [name, p] : params_) {
    if (name.rfind("prior/", 0) == 0) out.push_back(std::stoi(name.substr(6)));
  }
  return out;
}

}  // namespace mdepth
