#pragma once

#include <map>
#include <string>
#include <vector>

#include "mdepth/diffengine.hpp"
#include "mdepth/losses.hpp"
#include "mdepth/motion.hpp"

namespace mdepth {

// Anything that maps a frame to a depth map on the tape.
class DepthPredictor {
 public:
  virtual ~DepthPredictor() = default;
  virtual ad::Var predict_depth(ad::Tape& tape, const std::string& frame_id) = 0;
};

// Anything that maps a frame pair (and an object in it) to a Pose6 on the tape.
class MotionPredictor {
 public:
  virtual ~MotionPredictor() = default;
  virtual ad::Var predict_ego(ad::Tape& tape, const std::string& pair_id) = 0;
  virtual ad::Var predict_object_motion(ad::Tape& tape, const std::string& pair_id, int object_id) = 0;
};

struct PredictorInit {
  double depth_init = 5.0;    // initial constant depth, world units
  double prior_init = 1.0;    // initial height prior for every category
  bool train_priors = true;   // false holds priors fixed
  std::map<int, double> prior_overrides;  // category -> initial prior
};

// Direct parameterization: one log-depth field per frame, one Pose6 per frame
// pair, one Pose6 per (pair, object) and one height prior per category, all
// stored in a single ParamSet under the names
//   depth/<frame>  ego/<pair>  object/<pair>/<id>  prior/<category>
class DirectPredictor : public DepthPredictor, public MotionPredictor {
 public:
  DirectPredictor() = default;
  explicit DirectPredictor(ad::ParamSet params) : params_(std::move(params)) {}

  void register_frame(const std::string& frame_id, int height, int width, double depth_init);
  void register_frame(const std::string& frame_id, Field log_depth);
  void register_pair(const std::string& pair_id, const Pose6& init = {});
  void register_object(const std::string& pair_id, int object_id, const Pose6& init = {});
  void register_category(int category_id, double prior, bool trainable);

  // Registers everything total_loss needs for the window (idempotent).
  void register_sample(const SequenceSample& sample, const PredictorInit& init);

  ad::Var predict_depth(ad::Tape& tape, const std::string& frame_id) override;
  ad::Var predict_ego(ad::Tape& tape, const std::string& pair_id) override;
  ad::Var predict_object_motion(ad::Tape& tape, const std::string& pair_id, int object_id) override;
  ad::Var predict_prior(ad::Tape& tape, int category_id);

  // Binds every parameter total_loss reads for the window.
  SampleVars bind_sample(ad::Tape& tape, const SequenceSample& sample, const LossOptions& options);

  // Values without a tape.
  DepthMap depth(const std::string& frame_id) const;
  Pose6 ego(const std::string& pair_id) const;
  Pose6 object_motion(const std::string& pair_id, int object_id) const;
  double prior(int category_id) const;

  bool has_frame(const std::string& frame_id) const;
  std::vector<std::string> frame_ids() const;
  std::vector<int> categories() const;

  ad::ParamSet& params() { return params_; }
  const ad::ParamSet& params() const { return params_; }

  static std::string depth_name(const std::string& frame_id) { return "depth/" + frame_id; }
  static std::string ego_name(const std::string& pair_id) { return "ego/" + pair_id; }
  static std::string object_name(const std::string& pair_id, int object_id) {
    return "object/" + pair_id + "/" + std::to_string(object_id);
  }
  static std::string prior_name(int category_id) { return "prior/" + std::to_string(category_id); }

  // Frame and pair ids used for a window.
  static std::string frame_id(const SequenceSample& s) { return s.name; }
  static std::string prev_pair(const SequenceSample& s) { return s.name + "/prev"; }
  static std::string next_pair(const SequenceSample& s) { return s.name + "/next"; }

 private:
  ad::Var lookup(ad::Tape& tape, const std::string& name, const char* what);

  ad::ParamSet params_;
};

}  // namespace mdepth
