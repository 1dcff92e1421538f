#include "mdepth/synthdata.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "mdepth/errors.hpp"

namespace mdepth::synth {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double lattice(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t seed) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ static_cast<std::uint64_t>(x));
  h = splitmix(h ^ static_cast<std::uint64_t>(y));
  h = splitmix(h ^ static_cast<std::uint64_t>(z));
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

double fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }

double lerp(double a, double b, double t) { return a + (b - a) * t; }

// Ground texture varies 4x slower along world z so the foreshortened floor
// stays band-limited on screen.
constexpr double kDepthAxisStretch = 0.25;

double texture(const Eigen::Vector3d& p, const SceneSpec& spec, std::uint64_t surface, int channel) {
  const std::uint64_t seed = splitmix(spec.texture_seed * 131 + surface * 7 + static_cast<std::uint64_t>(channel));
  double acc = 0, norm = 0, amp = 1, freq = spec.texture_frequency;
  for (int octave = 0; octave < 4; ++octave) {
    const Eigen::Vector3d q(p.x() * freq, p.y() * freq, p.z() * freq * kDepthAxisStretch);
    acc += amp * (value_noise(q, seed + static_cast<std::uint64_t>(octave)) - 0.5);
    norm += amp * 0.5;
    amp *= 0.5;
    freq *= 2;
  }
  return 0.5 + spec.texture_contrast * acc / norm;
}

Eigen::Vector3d object_center(const ObjectSpec& o, int frame) { return o.position + o.velocity * frame; }

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int object = -1;  // index into spec.objects, -1 for background
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
};

}  // namespace

double value_noise(const Eigen::Vector3d& p, std::uint64_t seed) {
  const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy), iz = static_cast<std::int64_t>(fz);
  const double tx = fade(p.x() - fx), ty = fade(p.y() - fy), tz = fade(p.z() - fz);
  double c[2][2];
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      c[dz][dy] = lerp(lattice(ix, iy + dy, iz + dz, seed), lattice(ix + 1, iy + dy, iz + dz, seed), tx);
    }
  }
  return lerp(lerp(c[0][0], c[0][1], ty), lerp(c[1][0], c[1][1], ty), tz);
}

void SceneSpec::validate() const {
  k.validate();
  if (!camera_step.finite()) throw InvalidArgument("scene: non-finite camera step");
  if (!(wall_depth > 0)) throw InvalidArgument("scene: wall must lie in front of the first camera");
  if (layout == Layout::ground_wall && !(ground_height > 0)) throw InvalidArgument("scene: ground must be below camera");
  if (frame_count < 1) throw InvalidArgument("scene: frame count must be positive");
  if (!(texture_frequency > 0) || !(texture_contrast > 0) || texture_contrast > 0.5) {
    throw InvalidArgument("scene: bad texture parameters");
  }
  for (const auto& o : objects) {
    if (o.object_id <= 0 || o.object_id > 255 || o.category_id < 0) throw InvalidArgument("scene: bad object ids");
    if (!(o.width > 0) || !(o.height > 0)) throw InvalidArgument("scene: object extent must be positive");
    for (int f = 0; f < frame_count; ++f) {
      const Eigen::Vector3d c = object_center(o, f);
      const Eigen::Vector3d cam = camera_pose(*this, f).translation();
      if (!(c.z() < wall_depth)) throw InvalidArgument("scene: object behind the background");
      if (!(c.z() - cam.z() > 0.1)) throw InvalidArgument("scene: object behind the camera");
    }
  }
}

SE3Matrix camera_pose(const SceneSpec& spec, int frame) {
  const SE3Matrix step = pose_to_matrix(spec.camera_step);
  SE3Matrix t;
  for (int i = 0; i < frame; ++i) t = t * step;
  return t;
}

Pose6 ego_motion(const SceneSpec& spec, int target, int source) {
  return matrix_to_pose(invert(camera_pose(spec, source)) * camera_pose(spec, target));
}

Pose6 object_motion(const SceneSpec& spec, const ObjectSpec& obj, int target, int source) {
  // T_t^-1 * Translate(c_s - c_t) * T_t: a pure translation R_t^T (c_s - c_t).
  const SE3Matrix tt = camera_pose(spec, target);
  const Eigen::Vector3d shift = object_center(obj, source) - object_center(obj, target);
  const Eigen::Vector3d local = tt.rotation().transpose() * shift;
  return Pose6{local.x(), local.y(), local.z(), 0, 0, 0};
}

RenderedFrame render(const SceneSpec& spec, int frame) {
  spec.validate();
  const Intrinsics& k = spec.k;
  const SE3Matrix pose = camera_pose(spec, frame);
  const Eigen::Matrix3d r = pose.rotation();
  const Eigen::Vector3d origin = pose.translation();

  Field image(k.height, k.width, 3);
  Field depth(k.height, k.width, 1);
  std::vector<Mask> object_masks(spec.objects.size(), Mask(k.height, k.width, 0));

  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Eigen::Vector3d dir_cam((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
      const Eigen::Vector3d dir = r * dir_cam;
      Hit hit;
      if (dir.z() > 0) {
        const double t = (spec.wall_depth - origin.z()) / dir.z();
        if (t > 0) hit = {t, -1, origin + t * dir};
      }
      if (spec.layout == Layout::ground_wall && dir.y() > 0) {
        const double t = (spec.ground_height - origin.y()) / dir.y();
        if (t > 0 && t < hit.t) hit = {t, -1, origin + t * dir};
      }
      for (std::size_t i = 0; i < spec.objects.size(); ++i) {
        const ObjectSpec& o = spec.objects[i];
        const Eigen::Vector3d c = object_center(o, frame);
        if (dir.z() <= 0) continue;
        const double t = (c.z() - origin.z()) / dir.z();
        if (!(t > 0) || !(t < hit.t)) continue;
        const Eigen::Vector3d p = origin + t * dir;
        if (std::abs(p.x() - c.x()) <= o.width / 2 && std::abs(p.y() - c.y()) <= o.height / 2) {
          hit = {t, static_cast<int>(i), p};
        }
      }
      if (!std::isfinite(hit.t)) throw InvalidArgument("scene: a camera ray hits no surface");
      // dir_cam has unit z, so the ray parameter is the z-depth.
      depth.at(x, y) = hit.t;
      if (hit.object >= 0) {
        const ObjectSpec& o = spec.objects[static_cast<std::size_t>(hit.object)];
        object_masks[static_cast<std::size_t>(hit.object)].at(x, y) = 1;
        const Eigen::Vector3d local = hit.point - object_center(o, frame);
        for (int ch = 0; ch < 3; ++ch) {
          image.at(x, y, ch) = texture(local, spec, 1000 + static_cast<std::uint64_t>(o.object_id), ch);
        }
      } else {
        for (int ch = 0; ch < 3; ++ch) image.at(x, y, ch) = texture(hit.point, spec, 0, ch);
      }
    }
  }

  RenderedFrame out{ImageField(std::move(image)), DepthMap(std::move(depth)), {}};
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    if (object_masks[i].count() == 0) continue;
    out.masks.push_back({spec.objects[i].object_id, spec.objects[i].category_id, std::move(object_masks[i])});
  }
  return out;
}

LabeledSample make_sample(const SceneSpec& spec, int center, const std::string& name) {
  if (center < 1 || center + 1 >= spec.frame_count) throw InvalidArgument("make_sample: window outside the sequence");
  LabeledSample out;
  SequenceSample& s = out.sample;
  s.name = name;
  s.k = spec.k;
  s.masks.height = spec.k.height;
  s.masks.width = spec.k.width;
  for (int f = 0; f < 3; ++f) {
    RenderedFrame r = render(spec, center - 1 + f);
    s.frames[static_cast<std::size_t>(f)] = r.image;
    s.masks.frames[static_cast<std::size_t>(f)] = std::move(r.masks);
    if (f == 1) out.truth.depth = r.depth;
  }
  out.truth.ego_prev = ego_motion(spec, center, center - 1);
  out.truth.ego_next = ego_motion(spec, center, center + 1);
  for (const auto* obj : s.masks.middle_objects()) {
    for (const auto& o : spec.objects) {
      if (o.object_id != obj->object_id) continue;
      out.truth.object_prev[o.object_id] = object_motion(spec, o, center, center - 1);
      out.truth.object_next[o.object_id] = object_motion(spec, o, center, center + 1);
    }
  }
  s.validate();
  return out;
}

std::vector<LabeledSample> make_stream(const SceneSpec& spec, const std::string& prefix) {
  std::vector<LabeledSample> out;
  for (int c = 1; c + 1 < spec.frame_count; ++c) out.push_back(make_sample(spec, c, prefix + std::to_string(c)));
  return out;
}

namespace {

Intrinsics square_intrinsics(int size) {
  const double c = (size - 1) / 2.0;
  return Intrinsics{static_cast<double>(size), static_cast<double>(size), c, c, size, size};
}

}  // namespace

SceneSpec static_scene(std::uint64_t seed, int size) {
  SceneSpec s;
  s.k = square_intrinsics(size);
  s.layout = Layout::plane;
  s.wall_depth = 5.0;
  s.camera_step = Pose6{0.1, 0, 0, 0, 0, 0};
  s.texture_seed = seed;
  return s;
}

SceneSpec standard_scene(std::uint64_t seed, int size) {
  SceneSpec s;
  s.k = square_intrinsics(size);
  s.layout = Layout::ground_wall;
  s.wall_depth = 4.0;
  s.ground_height = 1.0;
  s.camera_step = Pose6{0.1, 0, 0.05, 0, 0.02, 0};
  s.texture_seed = seed;
  return s;
}

SceneSpec dynamic_scene(std::uint64_t seed, int size) {
  SceneSpec s = standard_scene(seed, size);
  ObjectSpec car;
  car.object_id = 1;
  car.category_id = 1;
  car.width = 1.4;
  car.height = 1.2;
  car.position = Eigen::Vector3d(-0.6, 0.3, 2.5);
  car.velocity = Eigen::Vector3d(0.15, 0, 0);
  s.objects.push_back(car);
  return s;
}

SceneSpec degenerate_follow_scene(const SceneSpec& base) {
  SceneSpec s = base;
  const double forward = base.camera_step.tz != 0 ? base.camera_step.tz : 0.2;
  s.camera_step = Pose6{0, 0, forward, 0, 0, 0};
  ObjectSpec lead;
  lead.object_id = 1;
  lead.category_id = 1;
  lead.width = 1.2;
  lead.height = 1.0;
  lead.position = Eigen::Vector3d(0.5, 0.35, 2.5);
  lead.velocity = Eigen::Vector3d(0, 0, forward);
  s.objects = {lead};
  return s;
}

SceneSpec random_static_scene(std::uint64_t seed, int size) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SceneSpec s;
  s.k = square_intrinsics(size);
  s.layout = u(rng) < 0.5 ? Layout::plane : Layout::ground_wall;
  s.wall_depth = 4.0 + 4.0 * u(rng);
  s.ground_height = 1.2 + 0.8 * u(rng);
  s.camera_step = Pose6{0.15 * (u(rng) - 0.5), 0.05 * (u(rng) - 0.5), 0.1 * (u(rng) - 0.5),
                        0.02 * (u(rng) - 0.5), 0.04 * (u(rng) - 0.5), 0.02 * (u(rng) - 0.5)};
  s.texture_seed = seed;
  return s;
}

}  // namespace mdepth::synth
