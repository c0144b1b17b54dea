#include "core/diff_pose.hpp"

#include <string>

#include "core/error.hpp"

namespace md {

namespace {

void check_scalar(const Tensor& t, const char* who) {
  if (!t.defined() || t.numel() != 1)
    throw InvalidArgument(std::string(who) + ": expected a defined scalar tensor");
}

}  // namespace

DiffPose DiffPose::identity() { return constant(Pose::identity()); }

DiffPose DiffPose::constant(const Pose& p) {
  DiffPose d;
  for (int i = 0; i < 9; ++i) d.R[i] = Tensor::scalar(p.R[i]);
  for (int i = 0; i < 3; ++i) d.t[i] = Tensor::scalar(p.t[i]);
  return d;
}

DiffPose DiffPose::from_euler(const Tensor& rx, const Tensor& ry,
                              const Tensor& rz, const Tensor& tx,
                              const Tensor& ty, const Tensor& tz) {
  for (const auto* a : {&rx, &ry, &rz, &tx, &ty, &tz})
    check_scalar(*a, "DiffPose::from_euler");
  const Tensor sa = sin(rx), ca = cos(rx);
  const Tensor sb = sin(ry), cb = cos(ry);
  const Tensor sc = sin(rz), cc = cos(rz);
  DiffPose d;
  d.R[0] = cc * cb;
  d.R[1] = cc * sb * sa - sc * ca;
  d.R[2] = cc * sb * ca + sc * sa;
  d.R[3] = sc * cb;
  d.R[4] = sc * sb * sa + cc * ca;
  d.R[5] = sc * sb * ca - cc * sa;
  d.R[6] = neg(sb);
  d.R[7] = cb * sa;
  d.R[8] = cb * ca;
  d.t = {tx, ty, tz};
  return d;
}

Pose DiffPose::eval() const {
  Pose p;
  for (int i = 0; i < 9; ++i) p.R[i] = R[i].item();
  for (int i = 0; i < 3; ++i) p.t[i] = t[i].item();
  return p;
}

DiffPose compose(const DiffPose& a, const DiffPose& b) {
  DiffPose c;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      c.R[i * 3 + j] = a.R[i * 3 + 0] * b.R[0 * 3 + j] +
                       a.R[i * 3 + 1] * b.R[1 * 3 + j] +
                       a.R[i * 3 + 2] * b.R[2 * 3 + j];
  for (int i = 0; i < 3; ++i)
    c.t[i] = a.R[i * 3 + 0] * b.t[0] + a.R[i * 3 + 1] * b.t[1] +
             a.R[i * 3 + 2] * b.t[2] + a.t[i];
  return c;
}

DiffPose inverse(const DiffPose& p) {
  DiffPose q;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) q.R[i * 3 + j] = p.R[j * 3 + i];
  for (int i = 0; i < 3; ++i)
    q.t[i] = neg(q.R[i * 3 + 0] * p.t[0] + q.R[i * 3 + 1] * p.t[1] +
                 q.R[i * 3 + 2] * p.t[2]);
  return q;
}

Tensor translation_norm(const DiffPose& p) {
  return sqrt(p.t[0] * p.t[0] + p.t[1] * p.t[1] + p.t[2] * p.t[2]);
}

std::vector<DiffPose> normalize_translations(const std::vector<DiffPose>& poses,
                                             int reference,
                                             const NominalDisplacement& nd) {
  if (reference < 0 || reference >= static_cast<int>(poses.size()))
    throw InvalidArgument("normalize_translations: index " +
                          std::to_string(reference) + " out of range");
  nd.validate();
  const Tensor scale =
      div(Tensor::scalar(nd.d0),
          add(translation_norm(poses[reference]), nd.epsilon));
  std::vector<DiffPose> out = poses;
  for (auto& p : out)
    for (int i = 0; i < 3; ++i) p.t[i] = p.t[i] * scale;
  return out;
}

}  // namespace md
