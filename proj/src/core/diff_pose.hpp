#pragma once

#include <array>
#include <vector>

#include "core/geometry.hpp"
#include "core/tensor.hpp"

namespace md {

// Rigid transform whose entries are scalar tensors, so pose estimates stay
// differentiable through composition, normalization, and warping. Entries
// built from constants carry no gradient.
struct DiffPose {
  std::array<Tensor, 9> R;  // row-major
  std::array<Tensor, 3> t;

  static DiffPose identity();
  static DiffPose constant(const Pose& p);
  // R = Rz(rz) * Ry(ry) * Rx(rx) expanded symbolically over scalar tensors.
  static DiffPose from_euler(const Tensor& rx, const Tensor& ry,
                             const Tensor& rz, const Tensor& tx,
                             const Tensor& ty, const Tensor& tz);

  Pose eval() const;  // current values, gradients dropped
};

DiffPose compose(const DiffPose& a, const DiffPose& b);
DiffPose inverse(const DiffPose& p);

// |t| as a scalar tensor (differentiable; zero vector yields zero gradient).
Tensor translation_norm(const DiffPose& p);

// Differentiable counterpart of the plain-pose translation normalization:
// every translation scaled by d0 / (epsilon + |t_r|).
std::vector<DiffPose> normalize_translations(const std::vector<DiffPose>& poses,
                                             int reference,
                                             const NominalDisplacement& nd);

}  // namespace md
