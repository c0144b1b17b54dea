#include "core/geometry.hpp"

#include <cmath>
#include <string>

#include "core/error.hpp"

namespace md {

Vec3 add3(const Vec3& a, const Vec3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
Vec3 sub3(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
Vec3 scale3(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double dot3(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
double norm3(const Vec3& a) { return std::sqrt(dot3(a, a)); }
Vec3 cross3(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}

Mat3 mat_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += a[i * 3 + k] * b[k * 3 + j];
      c[i * 3 + j] = acc;
    }
  return c;
}

Mat3 mat_transpose(const Mat3& a) {
  return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

Vec3 mat_apply(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
          m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

double mat_det(const Mat3& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) -
         m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Intrinsics Intrinsics::centered(int width, int height) {
  Intrinsics k;
  k.fx = k.fy = static_cast<double>(width);
  k.cx = (width - 1) / 2.0;
  k.cy = (height - 1) / 2.0;
  return k;
}

Vec3 Intrinsics::unproject(double u, double v) const {
  return {(u - cx) / fx, (v - cy) / fy, 1.0};
}

void Intrinsics::project(const Vec3& p, double& u, double& v) const {
  u = fx * p[0] / p[2] + cx;
  v = fy * p[1] / p[2] + cy;
}

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0))
    throw InvalidArgument("intrinsics: focal lengths must be positive");
}

Intrinsics halve(const Intrinsics& k) {
  // Cell centers of the pooled image sit at (2u + 0.5, 2v + 0.5) of the
  // parent grid, hence the extra 1/4-cell shift of the principal point.
  Intrinsics h;
  h.fx = k.fx / 2.0;
  h.fy = k.fy / 2.0;
  h.cx = (k.cx + 0.5) / 2.0 - 0.5;
  h.cy = (k.cy + 0.5) / 2.0 - 0.5;
  return h;
}

Intrinsics at_scale(const Intrinsics& k, int s) {
  if (s < 0) throw InvalidArgument("at_scale: negative scale");
  Intrinsics r = k;
  for (int i = 0; i < s; ++i) r = halve(r);
  return r;
}

Pose Pose::identity() { return Pose{}; }

Pose Pose::from_euler(const Vec3& angles_xyz, const Vec3& translation) {
  return Pose{euler_to_matrix(angles_xyz), translation};
}

Vec3 Pose::apply(const Vec3& p) const { return add3(mat_apply(R, p), t); }

Pose compose(const Pose& a, const Pose& b) {
  return Pose{mat_mul(a.R, b.R), add3(mat_apply(a.R, b.t), a.t)};
}

Pose inverse(const Pose& p) {
  const Mat3 rt = mat_transpose(p.R);
  return Pose{rt, scale3(mat_apply(rt, p.t), -1.0)};
}

Mat3 euler_to_matrix(const Vec3& an) {
  const double ca = std::cos(an[0]), sa = std::sin(an[0]);
  const double cb = std::cos(an[1]), sb = std::sin(an[1]);
  const double cc = std::cos(an[2]), sc = std::sin(an[2]);
  const Mat3 rx = {1, 0, 0, 0, ca, -sa, 0, sa, ca};
  const Mat3 ry = {cb, 0, sb, 0, 1, 0, -sb, 0, cb};
  const Mat3 rz = {cc, -sc, 0, sc, cc, 0, 0, 0, 1};
  return mat_mul(rz, mat_mul(ry, rx));
}

Vec3 matrix_to_euler(const Mat3& r) {
  double s = -r[6];
  if (s > 1.0) s = 1.0;
  if (s < -1.0) s = -1.0;
  return {std::atan2(r[7], r[8]), std::asin(s), std::atan2(r[3], r[0])};
}

bool reproject(const Intrinsics& k, const Pose& pose, double u, double v,
               double depth, double& out_u, double& out_v, double zmin) {
  const Vec3 p = pose.apply(scale3(k.unproject(u, v), depth));
  if (!(p[2] > zmin)) {
    out_u = out_v = 0.0;
    return false;
  }
  k.project(p, out_u, out_v);
  return true;
}

void NominalDisplacement::validate() const {
  if (!(d0 > 0.0)) throw InvalidArgument("nominal displacement must be positive");
  if (!(epsilon > 0.0) || epsilon > d0 * 1e-3)
    throw InvalidArgument("displacement guard must satisfy 0 < epsilon <= d0*1e-3");
}

std::vector<Pose> compensate_to_target(const std::vector<Pose>& poses_to_last,
                                       int target) {
  if (target < 0 || target >= static_cast<int>(poses_to_last.size()))
    throw InvalidArgument("compensate_to_target: index " +
                          std::to_string(target) + " out of range");
  const Pose to_last_inv = inverse(poses_to_last[target]);
  std::vector<Pose> out;
  out.reserve(poses_to_last.size());
  for (const auto& p : poses_to_last) out.push_back(compose(p, to_last_inv));
  return out;
}

std::vector<Pose> normalize_translations(const std::vector<Pose>& poses,
                                         int reference,
                                         const NominalDisplacement& nd) {
  if (reference < 0 || reference >= static_cast<int>(poses.size()))
    throw InvalidArgument("normalize_translations: index " +
                          std::to_string(reference) + " out of range");
  nd.validate();
  const double scale = nd.d0 / (nd.epsilon + norm3(poses[reference].t));
  std::vector<Pose> out = poses;
  for (auto& p : out) p.t = scale3(p.t, scale);
  return out;
}

std::vector<double> absolute_depth(const std::vector<double>& zeta,
                                   double displacement,
                                   const NominalDisplacement& nd) {
  nd.validate();
  if (!(displacement > 0.0))
    throw InvalidArgument("absolute_depth: displacement must be positive");
  std::vector<double> out = zeta;
  const double s = displacement / nd.d0;
  for (auto& z : out) z *= s;
  return out;
}

}  // namespace md
