#pragma once

#include <array>
#include <vector>

namespace md {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major

Vec3 add3(const Vec3& a, const Vec3& b);
Vec3 sub3(const Vec3& a, const Vec3& b);
Vec3 scale3(const Vec3& a, double s);
double dot3(const Vec3& a, const Vec3& b);
double norm3(const Vec3& a);
Vec3 cross3(const Vec3& a, const Vec3& b);

Mat3 mat_identity();
Mat3 mat_mul(const Mat3& a, const Mat3& b);
Mat3 mat_transpose(const Mat3& a);
Vec3 mat_apply(const Mat3& m, const Vec3& v);
double mat_det(const Mat3& m);

// Pinhole camera. Pixel (u,v) = (column, row), origin at the top-left cell
// center.
struct Intrinsics {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;

  // fx = fy = width, principal point at the image center.
  static Intrinsics centered(int width, int height);

  // Ray direction for a pixel, z component 1 (so the ray parameter is
  // z-depth).
  Vec3 unproject(double u, double v) const;
  // Perspective projection of a camera-space point; caller checks z > 0.
  void project(const Vec3& p, double& u, double& v) const;

  void validate() const;  // fx, fy > 0
};

// Intrinsics of the half-resolution image (cell centers shift by 1/4 cell).
Intrinsics halve(const Intrinsics& k);
Intrinsics at_scale(const Intrinsics& k, int s);  // halve applied s times

// Rigid transform acting on points: x' = R x + t.
struct Pose {
  Mat3 R = mat_identity();
  Vec3 t = {0, 0, 0};

  static Pose identity();
  static Pose from_euler(const Vec3& angles_xyz, const Vec3& translation);
  Vec3 apply(const Vec3& p) const;
};

// compose(a, b): apply b first, then a.
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

// R = Rz(c) * Ry(b) * Rx(a) for angles (a, b, c).
Mat3 euler_to_matrix(const Vec3& angles_xyz);
// Inverse of the above away from gimbal lock (|b| < pi/2).
Vec3 matrix_to_euler(const Mat3& r);

// Pixel reprojection through depth and a rigid transform:
// p' = project(K, pose(depth * unproject(K, p))). Returns false (invalid)
// when the transformed point has z <= zmin.
bool reproject(const Intrinsics& k, const Pose& pose, double u, double v,
               double depth, double& out_u, double& out_v,
               double zmin = 1e-6);

// Fixed nominal displacement for translation normalization.
struct NominalDisplacement {
  double d0 = 1.0;
  double epsilon = 1e-5;
  void validate() const;  // d0 > 0, 0 < epsilon <= d0 * 1e-3
};

// Rebases frame-to-last poses so entry `target` becomes the identity:
// out[i] = in[i] o inverse(in[target]).
std::vector<Pose> compensate_to_target(const std::vector<Pose>& poses_to_last,
                                       int target);

// Scales every translation by d0 / (epsilon + |t_r|); rotations unchanged.
std::vector<Pose> normalize_translations(const std::vector<Pose>& poses,
                                         int reference,
                                         const NominalDisplacement& nd);

// Metric depth from normalized depth and the known reference displacement.
std::vector<double> absolute_depth(const std::vector<double>& zeta,
                                   double displacement,
                                   const NominalDisplacement& nd);

}  // namespace md
