#include "mdepth/geometry.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "mdepth/errors.hpp"

namespace mdepth {

void Intrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw InvalidArgument("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw InvalidArgument("intrinsics: image size must be positive");
  if (!(cx >= 0 && cx < width && cy >= 0 && cy < height)) {
    throw InvalidArgument("intrinsics: principal point outside the image");
  }
}

Intrinsics Intrinsics::downsampled() const {
  // A pooled pixel u covers fine pixels 2u and 2u+1, so u_fine = 2u + 0.5.
  Intrinsics k = *this;
  k.fx = fx / 2;
  k.fy = fy / 2;
  k.cx = (cx - 0.5) / 2;
  k.cy = (cy - 0.5) / 2;
  k.width = width / 2;
  k.height = height / 2;
  return k;
}

Eigen::Matrix3d Intrinsics::matrix() const {
  Eigen::Matrix3d m;
  m << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return m;
}

std::string format_intrinsics(const Intrinsics& k) {
  std::ostringstream os;
  os.precision(17);
  os << "fx=" << k.fx << "\nfy=" << k.fy << "\ncx=" << k.cx << "\ncy=" << k.cy << "\nwidth=" << k.width
     << "\nheight=" << k.height << "\n";
  return os.str();
}

Intrinsics parse_intrinsics(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw ConfigError("intrinsics: malformed line '" + line + "'");
    }
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto take = [&](const char* key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError(std::string("intrinsics: missing key ") + key);
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  Intrinsics k;
  try {
    k.fx = std::stod(take("fx"));
    k.fy = std::stod(take("fy"));
    k.cx = std::stod(take("cx"));
    k.cy = std::stod(take("cy"));
    k.width = std::stoi(take("width"));
    k.height = std::stoi(take("height"));
  } catch (const std::logic_error&) {
    throw ConfigError("intrinsics: unparsable value");
  }
  if (!kv.empty()) throw ConfigError("intrinsics: unknown key " + kv.begin()->first);
  k.validate();
  return k;
}

bool Pose6::finite() const {
  for (double v : as_array())
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

Eigen::Matrix3d rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return m;
}
Eigen::Matrix3d rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}
Eigen::Matrix3d rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}
Eigen::Matrix3d drot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << 0, 0, 0, 0, -s, -c, 0, c, -s;
  return m;
}
Eigen::Matrix3d drot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << -s, 0, c, 0, 0, 0, -c, 0, -s;
  return m;
}
Eigen::Matrix3d drot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << -s, -c, 0, c, -s, 0, 0, 0, 0;
  return m;
}

}  // namespace

Eigen::Matrix3d euler_rotation(double rx, double ry, double rz) { return rot_z(rz) * rot_y(ry) * rot_x(rx); }

std::array<Eigen::Matrix3d, 3> euler_rotation_derivatives(double rx, double ry, double rz) {
  const Eigen::Matrix3d x = rot_x(rx), y = rot_y(ry), z = rot_z(rz);
  return {z * y * drot_x(rx), z * drot_y(ry) * x, drot_z(rz) * y * x};
}

bool SE3Matrix::is_rigid(const Eigen::Matrix4d& m, double tol) {
  if (!m.allFinite()) return false;
  const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
  if (((r.transpose() * r) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  if (std::abs(r.determinant() - 1.0) > tol) return false;
  return m(3, 0) == 0 && m(3, 1) == 0 && m(3, 2) == 0 && m(3, 3) == 1;
}

SE3Matrix::SE3Matrix(const Eigen::Matrix4d& m) : m_(m) {
  if (!is_rigid(m)) throw InvalidArgument("SE3Matrix: not a rigid transform");
}

SE3Matrix::SE3Matrix(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : m_(Eigen::Matrix4d::Identity()) {
  m_.topLeftCorner<3, 3>() = rotation;
  m_.topRightCorner<3, 1>() = translation;
}

SE3Matrix SE3Matrix::operator*(const SE3Matrix& o) const {
  SE3Matrix out;
  out.m_ = m_ * o.m_;
  return out;
}

SE3Matrix pose_to_matrix(const Pose6& p) {
  if (!p.finite()) throw InvalidArgument("pose_to_matrix: non-finite pose");
  return SE3Matrix(euler_rotation(p.rx, p.ry, p.rz), p.translation());
}

Pose6 matrix_to_pose(const SE3Matrix& m) {
  const Eigen::Matrix3d r = m.rotation();
  const Eigen::Vector3d t = m.translation();
  Pose6 p;
  p.tx = t.x();
  p.ty = t.y();
  p.tz = t.z();
  p.ry = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  p.rx = std::atan2(r(2, 1), r(2, 2));
  p.rz = std::atan2(r(1, 0), r(0, 0));
  return p;
}

SE3Matrix invert(const SE3Matrix& m) {
  if (!SE3Matrix::is_rigid(m.matrix())) throw InvalidArgument("invert: not a rigid transform");
  const Eigen::Matrix3d rt = m.rotation().transpose();
  return SE3Matrix(rt, -rt * m.translation());
}

PointGrid backproject(const Field& depth, const Intrinsics& k) {
  if (depth.channels != 1 || depth.width != k.width || depth.height != k.height) {
    throw ContractViolation("backproject: depth shape does not match intrinsics");
  }
  PointGrid out{Field(depth.height, depth.width, 3)};
  for (int y = 0; y < depth.height; ++y) {
    for (int x = 0; x < depth.width; ++x) {
      const double d = depth.at(x, y);
      if (!(d > 0) || !std::isfinite(d)) throw InvalidArgument("backproject: non-positive depth");
      out.points.at(x, y, 0) = d * (x - k.cx) / k.fx;
      out.points.at(x, y, 1) = d * (y - k.cy) / k.fy;
      out.points.at(x, y, 2) = d;
    }
  }
  return out;
}

Projection project(const PointGrid& pts, const Intrinsics& k) {
  const Field& p = pts.points;
  if (p.channels != 3) throw ContractViolation("project: points must have 3 channels");
  Projection out{Field(p.height, p.width, 2), Field(p.height, p.width, 1), Mask(p.height, p.width, 1)};
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) {
      const double z = p.at(x, y, 2);
      out.depth.at(x, y) = z;
      if (!(z > kNearPlane)) {
        out.valid.at(x, y) = 0;
        out.coords.at(x, y, 0) = k.cx;
        out.coords.at(x, y, 1) = k.cy;
        continue;
      }
      out.coords.at(x, y, 0) = k.fx * p.at(x, y, 0) / z + k.cx;
      out.coords.at(x, y, 1) = k.fy * p.at(x, y, 1) / z + k.cy;
    }
  }
  return out;
}

}  // namespace mdepth
