#include "mdepth/diffengine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>

#include "mdepth/errors.hpp"

namespace mdepth::ad {

// ---------------------------------------------------------------------------
// Var / ParamSet / Tape

const Field& Var::value() const {
  if (!tape_) throw ContractViolation("Var: empty handle");
  return tape_->value(id_);
}

double Var::item() const {
  const Field& v = value();
  if (!v.is_scalar()) throw ContractViolation("Var::item on a non-scalar node");
  return v.data[0];
}

Param& ParamSet::add(const std::string& name, Field value, bool trainable) {
  if (params_.count(name)) throw ContractViolation("ParamSet: duplicate parameter " + name);
  Param p;
  p.grad = Field(value.height, value.width, value.channels, 0.0);
  p.value = std::move(value);
  p.trainable = trainable;
  return params_.emplace(name, std::move(p)).first->second;
}

Param& ParamSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw LookupError("ParamSet: unknown parameter " + name);
  return it->second;
}

const Param& ParamSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw LookupError("ParamSet: unknown parameter " + name);
  return it->second;
}

void ParamSet::zero_grad() {
  for (auto& [name, p] : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

std::size_t ParamSet::component_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

Var Tape::constant(Field value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::variable(Field value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(ParamSet& params, const std::string& name) {
  Param& p = params.at(name);
  Node n;
  n.value = p.value;
  n.needs_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Field value, const std::vector<Var>& inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape() != this) throw ContractViolation("Tape::record: input belongs to another tape");
    n.needs_grad = n.needs_grad || needs_grad(in.id());
  }
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Field& Tape::grad_slot(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.reached) {
    n.grad = Field(n.value.height, n.value.width, n.value.channels, 0.0);
    n.reached = true;
  }
  return n.grad;
}

Field Tape::grad(const Var& v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (n.reached) return n.grad;
  return Field(n.value.height, n.value.width, n.value.channels, 0.0);
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw ContractViolation("backward: loss recorded on another tape");
  if (!value(loss.id()).is_scalar()) throw ContractViolation("backward: loss is not a scalar");
  for (Node& n : nodes_) {
    n.reached = false;
    n.grad = Field();
    if (n.param) std::fill(n.param->grad.data.begin(), n.param->grad.data.end(), 0.0);
  }
  grad_slot(loss.id()).data[0] = 1.0;
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.reached || !n.needs_grad || !n.backward) continue;
    n.backward(*this, i);
  }
  for (Node& n : nodes_) {
    if (!n.param || !n.reached) continue;
    auto& dst = n.param->grad.data;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += n.grad.data[j];
  }
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

Tape& common_tape(const Var& a, const Var& b) {
  if (!a || !b || a.tape() != b.tape()) throw ContractViolation("operands must share a tape");
  return *a.tape();
}

const Field& broadcast_shape(const Field& a, const Field& b) {
  if (a.same_shape(b)) return a;
  if (a.is_scalar()) return b;
  if (b.is_scalar()) return a;
  throw ContractViolation("binary op: incompatible shapes");
}

// f(a, b) -> value; da(a, b) and db(a, b) -> partial derivatives.
template <typename F, typename DA, typename DB>
Var binary(const Var& a, const Var& b, F f, DA da, DB db) {
  Tape& t = common_tape(a, b);
  const Field& av = a.value();
  const Field& bv = b.value();
  const Field& shape = broadcast_shape(av, bv);
  Field out(shape.height, shape.width, shape.channels);
  const bool as = av.is_scalar(), bs = bv.is_scalar();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = f(av.data[as ? 0 : i], bv.data[bs ? 0 : i]);
  }
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib, as, bs, da, db](Tape& tp, int self) {
    const Field& g = tp.output_grad(self);
    const Field& x = tp.value(ia);
    const Field& y = tp.value(ib);
    if (tp.needs_grad(ia)) {
      Field& ga = tp.grad_slot(ia);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga.data[as ? 0 : i] += g.data[i] * da(x.data[as ? 0 : i], y.data[bs ? 0 : i]);
      }
    }
    if (tp.needs_grad(ib)) {
      Field& gb = tp.grad_slot(ib);
      for (std::size_t i = 0; i < g.size(); ++i) {
        gb.data[bs ? 0 : i] += g.data[i] * db(x.data[as ? 0 : i], y.data[bs ? 0 : i]);
      }
    }
  });
}

// f(x) -> value; df(x, y) -> derivative given input x and output y.
template <typename F, typename DF>
Var unary(const Var& a, F f, DF df) {
  Tape& t = *a.tape();
  const Field& av = a.value();
  Field out(av.height, av.width, av.channels);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = f(av.data[i]);
  const int ia = a.id();
  return t.record(std::move(out), {a}, [ia, df](Tape& tp, int self) {
    const Field& g = tp.output_grad(self);
    const Field& x = tp.value(ia);
    const Field& y = tp.value(self);
    Field& ga = tp.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * df(x.data[i], y.data[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

// Ties send the gradient to the first operand.
Var minimum(const Var& a, const Var& b) {
  Var out = binary(
      a, b, [](double x, double y) { return std::min(x, y); },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; }, [](double x, double y) { return x <= y ? 0.0 : 1.0; });
  const Field& av = a.value();
  const Field& bv = b.value();
  for (std::size_t i = 0; i < out.value().size(); ++i) {
    const double x = av.size() == 1 ? av.data[0] : av.data[i], y = bv.size() == 1 ? bv.data[0] : bv.data[i];
    out.tape()->note_branch(x <= y ? 1 : 2);
  }
  return out;
}

Var add_scalar(const Var& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, double c) {
  return unary(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// Subgradient 0 at the origin.
Var abs(const Var& a) {
  Var out = unary(
      a, [](double x) { return std::abs(x); }, [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
  for (double x : a.value().data) out.tape()->note_branch(x > 0 ? 1 : (x < 0 ? 2 : 3));
  return out;
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2 * x; });
}

Var reciprocal(const Var& a) {
  return unary(a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

Var select(const Mask& mask, const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Field& av = a.value();
  const Field& bv = b.value();
  if (!av.same_shape(bv) || mask.height != av.height || mask.width != av.width) {
    throw ContractViolation("select: shape mismatch");
  }
  const int c = av.channels;
  Field out = bv;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (!mask.data[p]) continue;
    for (int k = 0; k < c; ++k) out.data[p * c + k] = av.data[p * c + k];
  }
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib, mask, c](Tape& tp, int self) {
    const Field& g = tp.output_grad(self);
    for (int side = 0; side < 2; ++side) {
      const int id = side == 0 ? ia : ib;
      if (!tp.needs_grad(id)) continue;
      Field& gs = tp.grad_slot(id);
      for (std::size_t p = 0; p < mask.size(); ++p) {
        if ((mask.data[p] != 0) != (side == 0)) continue;
        for (int k = 0; k < c; ++k) gs.data[p * c + k] += g.data[p * c + k];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// reductions

Var sum(const Var& a) {
  const Field& av = a.value();
  double s = 0;
  for (double v : av.data) s += v;
  const int ia = a.id();
  return a.tape()->record(Field::scalar(s), {a}, [ia](Tape& tp, int self) {
    const double g = tp.output_grad(self).data[0];
    for (double& v : tp.grad_slot(ia).data) v += g;
  });
}

Var mean(const Var& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var masked_mean(const Var& a, const Mask& mask) {
  const Field& av = a.value();
  if (mask.height != av.height || mask.width != av.width) throw ContractViolation("masked_mean: shape mismatch");
  const std::size_t n = mask.count() * static_cast<std::size_t>(av.channels);
  if (n == 0) return a.tape()->constant(0.0);
  const int c = av.channels;
  double s = 0;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (!mask.data[p]) continue;
    for (int k = 0; k < c; ++k) s += av.data[p * c + k];
  }
  const double inv = 1.0 / static_cast<double>(n);
  const int ia = a.id();
  return a.tape()->record(Field::scalar(s * inv), {a}, [ia, mask, c, inv](Tape& tp, int self) {
    const double g = tp.output_grad(self).data[0] * inv;
    Field& ga = tp.grad_slot(ia);
    for (std::size_t p = 0; p < mask.size(); ++p) {
      if (!mask.data[p]) continue;
      for (int k = 0; k < c; ++k) ga.data[p * c + k] += g;
    }
  });
}

Var channel_mean(const Var& a) {
  const Field& av = a.value();
  const int c = av.channels;
  Field out(av.height, av.width, 1);
  for (std::size_t p = 0; p < out.size(); ++p) {
    double s = 0;
    for (int k = 0; k < c; ++k) s += av.data[p * c + k];
    out.data[p] = s / c;
  }
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, c](Tape& tp, int self) {
    const Field& g = tp.output_grad(self);
    Field& ga = tp.grad_slot(ia);
    for (std::size_t p = 0; p < g.size(); ++p) {
      for (int k = 0; k < c; ++k) ga.data[p * c + k] += g.data[p] / c;
    }
  });
}

// ---------------------------------------------------------------------------
// spatial

Var box_filter3(const Var& a) {
  const Field& av = a.value();
  const int h = av.height, w = av.width, c = av.channels;
  Field out(h, w, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) {
        double s = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = std::clamp(y + dy, 0, h - 1);
          for (int dx = -1; dx <= 1; ++dx) s += av.at(std::clamp(x + dx, 0, w - 1), yy, k);
        }
        out.at(x, y, k) = s / 9.0;
      }
    }
  }
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, h, w, c](Tape& tp, int self) {
    const Field& g = tp.output_grad(self);
    Field& ga = tp.grad_slot(ia);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int k = 0; k < c; ++k) {
          const double gv = g.at(x, y, k) / 9.0;
          for (int dy = -1; dy <= 1; ++dy) {
            const int yy = std::clamp(y + dy, 0, h - 1);
            for (int dx = -1; dx <= 1; ++dx) ga.at(std::clamp(x + dx, 0, w - 1), yy, k) += gv;
          }
        }
      }
    }
  });
}

Var box_covariance3(const Var& a, const Var& b) {
  const Field& av = a.value();
  const Field& bv = b.value();
  if (!av.same_shape(bv)) throw ContractViolation("box_covariance3: shape mismatch");
  const int h = av.height, w = av.width, c = av.channels;
  // Window of (x, y) with replicated borders, as in box_filter3.
  auto window = [h, w](int x, int y, int i) {
    return std::pair{std::clamp(x + i % 3 - 1, 0, w - 1), std::clamp(y + i / 3 - 1, 0, h - 1)};
  };
  Field mu_a(h, w, c), mu_b(h, w, c), out(h, w, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) {
        double sa = 0, sb = 0;
        for (int i = 0; i < 9; ++i) {
          const auto [xx, yy] = window(x, y, i);
          sa += av.at(xx, yy, k);
          sb += bv.at(xx, yy, k);
        }
        const double ma = sa / 9.0, mb = sb / 9.0;
        // Centred second pass: E[ab] - E[a]E[b] cancels badly on flat windows.
        double s = 0;
        for (int i = 0; i < 9; ++i) {
          const auto [xx, yy] = window(x, y, i);
          s += (av.at(xx, yy, k) - ma) * (bv.at(xx, yy, k) - mb);
        }
        mu_a.at(x, y, k) = ma;
        mu_b.at(x, y, k) = mb;
        out.at(x, y, k) = s / 9.0;
      }
    }
  }
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, h, w, c, window, mu_a, mu_b, av, bv](Tape& tp, int self) {
    const Field& g = tp.output_grad(self);
    Field& ga = tp.grad_slot(ia);
    Field& gb = tp.grad_slot(ib);
    // The mean terms drop out: deviations from the window mean sum to zero.
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int k = 0; k < c; ++k) {
          const double gv = g.at(x, y, k) / 9.0;
          for (int i = 0; i < 9; ++i) {
            const auto [xx, yy] = window(x, y, i);
            ga.at(xx, yy, k) += gv * (bv.at(xx, yy, k) - mu_b.at(x, y, k));
            gb.at(xx, yy, k) += gv * (av.at(xx, yy, k) - mu_a.at(x, y, k));
          }
        }
      }
    }
  });
}

Var downsample2(const Var& a) {
  const Field& av = a.value();
  const int h = av.height / 2, w = av.width / 2, c = av.channels;
  if (h == 0 || w == 0) throw ContractViolation("downsample2: field too small");
  Field out(h, w, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) {
        out.at(x, y, k) = 0.25 * (av.at(2 * x, 2 * y, k) + av.at(2 * x + 1, 2 * y, k) + av.at(2 * x, 2 * y + 1, k) +
                                  av.at(2 * x + 1, 2 * y + 1, k));
      }
    }
  }
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, h, w, c](Tape& tp, int self) {
    const Field& g = tp.output_grad(self);
    Field& ga = tp.grad_slot(ia);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int k = 0; k < c; ++k) {
          const double gv = 0.25 * g.at(x, y, k);
          ga.at(2 * x, 2 * y, k) += gv;
          ga.at(2 * x + 1, 2 * y, k) += gv;
          ga.at(2 * x, 2 * y + 1, k) += gv;
          ga.at(2 * x + 1, 2 * y + 1, k) += gv;
        }
      }
    }
  });
}

namespace {

Var forward_difference(const Var& a, int dx, int dy) {
  const Field& av = a.value();
  const int h = av.height - dy, w = av.width - dx, c = av.channels;
  if (h <= 0 || w <= 0) throw ContractViolation("forward difference: field too small");
  Field out(h, w, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) out.at(x, y, k) = av.at(x + dx, y + dy, k) - av.at(x, y, k);
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, h, w, c, dx, dy](Tape& tp, int self) {
    const Field& g = tp.output_grad(self);
    Field& ga = tp.grad_slot(ia);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int k = 0; k < c; ++k) {
          ga.at(x + dx, y + dy, k) += g.at(x, y, k);
          ga.at(x, y, k) -= g.at(x, y, k);
        }
      }
    }
  });
}

}  // namespace

Var diff_x(const Var& a) { return forward_difference(a, 1, 0); }
Var diff_y(const Var& a) { return forward_difference(a, 0, 1); }

Var crop(const Var& a, int h, int w) {
  const Field& av = a.value();
  if (h <= 0 || w <= 0 || h > av.height || w > av.width) throw ContractViolation("crop: window outside field");
  const int c = av.channels;
  Field out(h, w, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) out.at(x, y, k) = av.at(x, y, k);
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, h, w, c](Tape& tp, int self) {
    const Field& g = tp.output_grad(self);
    Field& ga = tp.grad_slot(ia);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int k = 0; k < c; ++k) ga.at(x, y, k) += g.at(x, y, k);
  });
}

// ---------------------------------------------------------------------------
// geometry

Var backproject(const Var& depth, const Intrinsics& k) {
  const Field& d = depth.value();
  if (d.channels != 1 || d.width != k.width || d.height != k.height) {
    throw ContractViolation("backproject: depth shape does not match intrinsics");
  }
  Field out(d.height, d.width, 3);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      const double z = d.at(x, y);
      if (!(z > 0) || !std::isfinite(z)) throw InvalidArgument("backproject: non-positive depth");
      out.at(x, y, 0) = z * (x - k.cx) / k.fx;
      out.at(x, y, 1) = z * (y - k.cy) / k.fy;
      out.at(x, y, 2) = z;
    }
  }
  const int id = depth.id();
  return depth.tape()->record(std::move(out), {depth}, [id, k](Tape& tp, int self) {
    const Field& g = tp.output_grad(self);
    Field& gd = tp.grad_slot(id);
    for (int y = 0; y < gd.height; ++y) {
      for (int x = 0; x < gd.width; ++x) {
        gd.at(x, y) += g.at(x, y, 0) * (x - k.cx) / k.fx + g.at(x, y, 1) * (y - k.cy) / k.fy + g.at(x, y, 2);
      }
    }
  });
}

Var rigid_transform(const Var& points, const Var& pose) {
  Tape& t = common_tape(points, pose);
  const Field& p = points.value();
  const Field& q = pose.value();
  if (p.channels != 3) throw ContractViolation("rigid_transform: points need 3 channels");
  if (q.size() != 6) throw ContractViolation("rigid_transform: pose needs 6 components");
  const Eigen::Matrix3d r = euler_rotation(q.data[3], q.data[4], q.data[5]);
  const Eigen::Vector3d tr(q.data[0], q.data[1], q.data[2]);
  Field out(p.height, p.width, 3);
  for (std::size_t i = 0; i < p.pixels(); ++i) {
    const Eigen::Vector3d v(p.data[3 * i], p.data[3 * i + 1], p.data[3 * i + 2]);
    const Eigen::Vector3d o = r * v + tr;
    out.data[3 * i] = o.x();
    out.data[3 * i + 1] = o.y();
    out.data[3 * i + 2] = o.z();
  }
  const int ip = points.id(), iq = pose.id();
  return t.record(std::move(out), {points, pose}, [ip, iq, r](Tape& tp, int self) {
    const Field& g = tp.output_grad(self);
    const std::size_t n = g.pixels();
    if (tp.needs_grad(ip)) {
      Field& gp = tp.grad_slot(ip);
      const Eigen::Matrix3d rt = r.transpose();
      for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d gi(g.data[3 * i], g.data[3 * i + 1], g.data[3 * i + 2]);
        const Eigen::Vector3d back = rt * gi;
        gp.data[3 * i] += back.x();
        gp.data[3 * i + 1] += back.y();
        gp.data[3 * i + 2] += back.z();
      }
    }
    if (tp.needs_grad(iq)) {
      const Field& pv = tp.value(ip);
      const Field& qv = tp.value(iq);
      const auto dr = euler_rotation_derivatives(qv.data[3], qv.data[4], qv.data[5]);
      // sum_i g_i p_i^T, then contract with each dR.
      Eigen::Matrix3d outer = Eigen::Matrix3d::Zero();
      Eigen::Vector3d gsum = Eigen::Vector3d::Zero();
      for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d gi(g.data[3 * i], g.data[3 * i + 1], g.data[3 * i + 2]);
        const Eigen::Vector3d pi(pv.data[3 * i], pv.data[3 * i + 1], pv.data[3 * i + 2]);
        outer += gi * pi.transpose();
        gsum += gi;
      }
      Field& gq = tp.grad_slot(iq);
      for (int a = 0; a < 3; ++a) gq.data[a] += gsum[a];
      for (int a = 0; a < 3; ++a) gq.data[3 + a] += dr[a].cwiseProduct(outer).sum();
    }
  });
}

ProjectResult project(const Var& points, const Intrinsics& k) {
  const Field& p = points.value();
  if (p.channels != 3) throw ContractViolation("project: points need 3 channels");
  Field out(p.height, p.width, 2);
  Mask valid(p.height, p.width, 1);
  for (std::size_t i = 0; i < p.pixels(); ++i) {
    const double z = p.data[3 * i + 2];
    if (!(z > kNearPlane)) {
      valid.data[i] = 0;
      out.data[2 * i] = k.cx;
      out.data[2 * i + 1] = k.cy;
      continue;
    }
    out.data[2 * i] = k.fx * p.data[3 * i] / z + k.cx;
    out.data[2 * i + 1] = k.fy * p.data[3 * i + 1] / z + k.cy;
  }
  for (std::uint8_t v : valid.data) points.tape()->note_branch(v);
  const int ip = points.id();
  Var coords = points.tape()->record(std::move(out), {points}, [ip, k, valid](Tape& tp, int self) {
    const Field& g = tp.output_grad(self);
    const Field& pv = tp.value(ip);
    Field& gp = tp.grad_slot(ip);
    for (std::size_t i = 0; i < valid.size(); ++i) {
      if (!valid.data[i]) continue;
      const double x = pv.data[3 * i], y = pv.data[3 * i + 1], z = pv.data[3 * i + 2];
      const double gu = g.data[2 * i], gv = g.data[2 * i + 1];
      gp.data[3 * i] += gu * k.fx / z;
      gp.data[3 * i + 1] += gv * k.fy / z;
      gp.data[3 * i + 2] += -(gu * k.fx * x + gv * k.fy * y) / (z * z);
    }
  });
  return {coords, std::move(valid)};
}

namespace {

struct Cell {
  int x0, y0, x1, y1;
  double fx, fy;
  bool dx_live, dy_live;  // coordinate not clamped
};

// Coordinates within this distance of a grid line are moved onto it, so that
// round trips through backproject/project sample integer pixels exactly.
constexpr double kGridSnap = 1e-10;

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < kGridSnap ? r : v;
}

Cell locate(double x, double y, int w, int h) {
  Cell c{};
  // Non-finite coordinates read pixel (0, 0); the caller marks them.
  x = std::isfinite(x) ? snap(x) : -1.0;
  y = std::isfinite(y) ? snap(y) : -1.0;
  const double xc = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const double yc = std::clamp(y, 0.0, static_cast<double>(h - 1));
  c.x0 = w > 1 ? std::min(static_cast<int>(std::floor(xc)), w - 2) : 0;
  c.y0 = h > 1 ? std::min(static_cast<int>(std::floor(yc)), h - 2) : 0;
  c.x1 = w > 1 ? c.x0 + 1 : 0;
  c.y1 = h > 1 ? c.y0 + 1 : 0;
  c.fx = w > 1 ? xc - c.x0 : 0.0;
  c.fy = h > 1 ? yc - c.y0 : 0.0;
  c.dx_live = w > 1 && x >= 0 && x <= w - 1;
  c.dy_live = h > 1 && y >= 0 && y <= h - 1;
  return c;
}

}  // namespace

SampleResult bilinear_sample(const Var& image, const Var& coords) {
  Tape& t = common_tape(image, coords);
  const Field& img = image.value();
  const Field& xy = coords.value();
  if (xy.channels != 2) throw ContractViolation("bilinear_sample: coords need 2 channels");
  const int w = img.width, h = img.height, c = img.channels;
  Field out(xy.height, xy.width, c);
  Mask inb(xy.height, xy.width, 0);
  for (std::size_t i = 0; i < xy.pixels(); ++i) {
    const double x = snap(xy.data[2 * i]), y = snap(xy.data[2 * i + 1]);
    inb.data[i] = (x >= 0 && x <= w - 1 && y >= 0 && y <= h - 1) ? 1 : 0;
    const Cell cell = locate(x, y, w, h);
    t.note_branch((static_cast<std::uint64_t>(cell.x0) << 32) ^ (static_cast<std::uint64_t>(cell.y0) << 8) ^
                  (cell.dx_live ? 1u : 0u) ^ (cell.dy_live ? 2u : 0u) ^ (inb.data[i] ? 4u : 0u));
    const double w00 = (1 - cell.fx) * (1 - cell.fy), w10 = cell.fx * (1 - cell.fy);
    const double w01 = (1 - cell.fx) * cell.fy, w11 = cell.fx * cell.fy;
    const bool finite = std::isfinite(x) && std::isfinite(y);
    for (int k = 0; k < c; ++k) {
      if (!finite) {
        out.data[i * c + k] = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      out.data[i * c + k] = w00 * img.at(cell.x0, cell.y0, k) + w10 * img.at(cell.x1, cell.y0, k) +
                            w01 * img.at(cell.x0, cell.y1, k) + w11 * img.at(cell.x1, cell.y1, k);
    }
  }
  const int ii = image.id(), ic = coords.id();
  Var values = t.record(std::move(out), {image, coords}, [ii, ic, w, h, c](Tape& tp, int self) {
    const Field& g = tp.output_grad(self);
    const Field& xyv = tp.value(ic);
    const Field& imv = tp.value(ii);
    const bool want_img = tp.needs_grad(ii), want_xy = tp.needs_grad(ic);
    Field* gi = want_img ? &tp.grad_slot(ii) : nullptr;
    Field* gc = want_xy ? &tp.grad_slot(ic) : nullptr;
    for (std::size_t i = 0; i < xyv.pixels(); ++i) {
      const Cell cell = locate(xyv.data[2 * i], xyv.data[2 * i + 1], w, h);
      double gx = 0, gy = 0;
      for (int k = 0; k < c; ++k) {
        const double gv = g.data[i * c + k];
        if (gv == 0) continue;
        const double v00 = imv.at(cell.x0, cell.y0, k), v10 = imv.at(cell.x1, cell.y0, k);
        const double v01 = imv.at(cell.x0, cell.y1, k), v11 = imv.at(cell.x1, cell.y1, k);
        if (gi) {
          gi->at(cell.x0, cell.y0, k) += gv * (1 - cell.fx) * (1 - cell.fy);
          gi->at(cell.x1, cell.y0, k) += gv * cell.fx * (1 - cell.fy);
          gi->at(cell.x0, cell.y1, k) += gv * (1 - cell.fx) * cell.fy;
          gi->at(cell.x1, cell.y1, k) += gv * cell.fx * cell.fy;
        }
        gx += gv * ((1 - cell.fy) * (v10 - v00) + cell.fy * (v11 - v01));
        gy += gv * ((1 - cell.fx) * (v01 - v00) + cell.fx * (v11 - v10));
      }
      if (gc) {
        if (cell.dx_live) gc->data[2 * i] += gx;
        if (cell.dy_live) gc->data[2 * i + 1] += gy;
      }
    }
  });
  return {values, std::move(inb)};
}

// ---------------------------------------------------------------------------
// finite differences

double value_and_grad(const ScalarFunction& f, ParamSet& params) {
  params.zero_grad();
  Tape tape;
  Var loss = f(tape, params);
  tape.backward(loss);
  return loss.item();
}

GradCheckResult grad_check(const ScalarFunction& f, ParamSet& params, const GradCheckOptions& options) {
  value_and_grad(f, params);

  struct Component {
    Param* param;
    const std::string* name;
    std::size_t index;
  };
  std::vector<Component> all;
  for (auto& [name, p] : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      if (!options.accept || options.accept(name, i)) all.push_back({&p, &name, i});
    }
  }

  // Visit components in a seeded random order until enough are checked.
  std::vector<std::size_t> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(options.seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<double> analytic(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) analytic[i] = all[i].param->grad.data[all[i].index];

  auto evaluate = [&](std::uint64_t* signature) {
    Tape tape;
    const double v = f(tape, params).item();
    *signature = tape.branch_signature();
    return v;
  };
  std::uint64_t base = 0;
  evaluate(&base);

  GradCheckResult result;
  for (std::size_t pick : order) {
    if (static_cast<int>(result.checked) >= options.samples) break;
    const Component& comp = all[pick];
    double& v = comp.param->value.data[comp.index];
    const double saved = v;
    std::uint64_t sig_up = 0, sig_down = 0;
    v = saved + options.step;
    const double up = evaluate(&sig_up);
    v = saved - options.step;
    const double down = evaluate(&sig_down);
    v = saved;
    if (options.smooth_only && (sig_up != base || sig_down != base)) {
      ++result.skipped;
      continue;
    }
    const double numeric = (up - down) / (2 * options.step);
    const double a = analytic[pick];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    ++result.checked;
    if (rel > result.max_relative_error || result.checked == 1) {
      result.max_relative_error = std::max(rel, result.max_relative_error);
      result.worst_param = *comp.name;
      result.worst_index = comp.index;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace mdepth::ad
