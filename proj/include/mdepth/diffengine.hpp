#pragma once

// Reverse-mode differentiation over the closed set of field operations used by
// the depth/motion pipeline. Each node of a Tape holds a whole Field (an image,
// a depth map, a pose vector or a scalar); backward closures scatter the
// node's gradient into its inputs.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mdepth/field.hpp"
#include "mdepth/geometry.hpp"

namespace mdepth::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
class Var {
 public:
  Var() = default;

  const Field& value() const;
  double item() const;  // value of a scalar node
  int height() const { return value().height; }
  int width() const { return value().width; }
  int channels() const { return value().channels; }
  bool is_scalar() const { return value().is_scalar(); }

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  explicit operator bool() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

struct Param {
  Field value;
  Field grad;
  bool trainable = true;
};

// Named differentiable tensors. Iteration order is the lexicographic name order,
// which fixes the order of every reduction over parameters.
class ParamSet {
 public:
  Param& add(const std::string& name, Field value, bool trainable = true);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  void zero_grad();
  std::size_t size() const { return params_.size(); }
  std::size_t component_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Param> params_;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Field value);
  Var constant(double v) { return constant(Field::scalar(v)); }
  // Leaf with a gradient slot that is not tied to a ParamSet.
  Var variable(Field value);
  // Leaf bound to params.at(name); backward() writes its gradient back.
  Var parameter(ParamSet& params, const std::string& name);

  // Appends an op node. The node needs a gradient iff any input does; the
  // backward closure is dropped otherwise.
  Var record(Field value, const std::vector<Var>& inputs, Backward backward);

  // Seeds d(loss)/d(loss) = 1 and runs every reachable closure once in reverse
  // recording order. Gradients of bound parameters are overwritten (parameters
  // bound but unreachable end with exact zeros). Throws ContractViolation on a
  // non-scalar loss or a loss from another tape.
  void backward(const Var& loss);

  const Field& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  // Gradient of a node after backward(); all zeros if the node was not reached.
  Field grad(const Var& v) const;

  // For backward closures: gradient accumulated so far for node id.
  const Field& output_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  // For backward closures: zero-initialized accumulator of input node id.
  Field& grad_slot(int id);

  std::size_t size() const { return nodes_.size(); }

  // Discrete decisions taken by non-smooth ops (abs signs, minimum choices,
  // projection validity, bilinear cells and bounds) folded into one hash. Two
  // evaluations with equal signatures ran on the same smooth piece.
  void note_branch(std::uint64_t decision) { signature_ = (signature_ ^ decision) * 0x100000001b3ull; }
  std::uint64_t branch_signature() const { return signature_; }

 private:
  struct Node {
    Field value;
    Field grad;
    bool needs_grad = false;
    bool reached = false;
    Backward backward;
    Param* param = nullptr;
  };
  std::vector<Node> nodes_;
  std::uint64_t signature_ = 0xcbf29ce484222325ull;
};

// ---- elementwise ----------------------------------------------------------
// Binary ops accept equal shapes, or one operand scalar (broadcast).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var minimum(const Var& a, const Var& b);

Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
Var exp(const Var& a);
Var log(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);
Var reciprocal(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator+(const Var& a, double c) { return add_scalar(a, c); }
inline Var operator+(double c, const Var& a) { return add_scalar(a, c); }
inline Var operator-(const Var& a, double c) { return add_scalar(a, -c); }
inline Var operator-(double c, const Var& a) { return add_scalar(mul_scalar(a, -1.0), c); }
inline Var operator-(const Var& a) { return mul_scalar(a, -1.0); }
inline Var operator*(const Var& a, double c) { return mul_scalar(a, c); }
inline Var operator*(double c, const Var& a) { return mul_scalar(a, c); }
inline Var operator/(const Var& a, double c) { return mul_scalar(a, 1.0 / c); }

// Per-pixel choice: a where mask is set, b elsewhere (mask broadcast over channels).
Var select(const Mask& mask, const Var& a, const Var& b);

// ---- reductions -----------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
// Mean over entries whose pixel is set in mask (all channels of those pixels).
// An empty mask yields the constant 0.
Var masked_mean(const Var& a, const Mask& mask);
// H x W x C -> H x W x 1 average over channels.
Var channel_mean(const Var& a);

// ---- spatial ----------------------------------------------------------------
// 3x3 box mean with replicate padding.
Var box_filter3(const Var& a);
// Windowed covariance over the same 3x3 replicated window, mean(ab) - mean(a)mean(b).
Var box_covariance3(const Var& a, const Var& b);
// 2x2 average pooling; odd trailing row/column dropped.
Var downsample2(const Var& a);
// Forward differences: diff_x is H x (W-1), diff_y is (H-1) x W.
Var diff_x(const Var& a);
Var diff_y(const Var& a);
// Top-left h x w window.
Var crop(const Var& a, int h, int w);

// ---- geometry ---------------------------------------------------------------
// depth H x W x 1 -> camera points H x W x 3 (depth must be > 0).
Var backproject(const Var& depth, const Intrinsics& k);
// points H x W x 3, pose 1 x 1 x 6 (tx ty tz rx ry rz) -> R(pose) * p + t.
Var rigid_transform(const Var& points, const Var& pose);

struct ProjectResult {
  Var coords;  // H x W x 2
  Mask valid;  // z > kNearPlane
};
// Points with z <= kNearPlane map to (cx, cy) with zero gradient.
ProjectResult project(const Var& points, const Intrinsics& k);

struct SampleResult {
  Var values;      // H x W x C (H, W from coords; C from image)
  Mask in_bounds;  // 0 <= x <= W_img-1 and 0 <= y <= H_img-1
};
// Bilinear interpolation with coordinates clamped to the image rectangle.
// Gradients flow to both the image and the coordinates.
SampleResult bilinear_sample(const Var& image, const Var& coords);

// ---- finite-difference checking --------------------------------------------
using ScalarFunction = std::function<Var(Tape&, ParamSet&)>;

struct GradCheckOptions {
  double step = 1e-4;
  int samples = 100;
  std::uint64_t seed = 0;
  // Optional filter on (parameter name, flat index); rejected components are redrawn.
  std::function<bool(const std::string&, std::size_t)> accept;
  // Skip components whose +-step stencil changes the tape's branch signature:
  // central differences across a kink do not estimate the derivative.
  bool smooth_only = false;
};

struct GradCheckResult {
  double max_relative_error = 0;
  std::size_t checked = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  std::size_t skipped = 0;  // stencils that crossed a kink (smooth_only)
};

// Max over sampled components of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
// numeric = central difference with the given step.
GradCheckResult grad_check(const ScalarFunction& f, ParamSet& params, const GradCheckOptions& options = {});

// Evaluates f on a fresh tape, runs backward, and leaves gradients in params.
double value_and_grad(const ScalarFunction& f, ParamSet& params);

}  // namespace mdepth::ad
