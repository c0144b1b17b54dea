#pragma once

#include "core/diff_pose.hpp"
#include "core/geometry.hpp"
#include "core/tensor.hpp"

namespace md {

// Synthesized view plus validity. Image cells are exactly 0 wherever the
// mask is 0 (sample fell outside the source or behind the camera); the mask
// is a constant tensor, carrying no gradient.
struct WarpResult {
  Tensor image;  // [C,H,W]
  Tensor mask;   // [H,W] of {0,1}
};

// Constant pixel-coordinate grids, (u,v) = (column, row), top-left cell
// center at (0,0).
Tensor pixel_u_grid(int h, int w);
Tensor pixel_v_grid(int h, int w);

// Bilinear interpolation of src [C,H,W] at coords [2,H',W'] (coords[0] = u,
// coords[1] = v). Differentiable in src and coords; out-of-bounds samples
// get image 0 and mask 0. Coordinates clamped to the border for
// interpolation keep zero coordinate gradient.
WarpResult bilinear_sample(const Tensor& src, const Tensor& coords);

// Warps src into the target grid: each target pixel backprojects through its
// depth, moves through the pose, reprojects, and samples src there. Cells
// landing behind the camera (z <= zmin) are masked out.
WarpResult inverse_warp(const Tensor& src, const Tensor& depth,
                        const DiffPose& pose, const Intrinsics& k,
                        double zmin = 1e-6);

// Rotation-only warp: samples src at K * R * K^-1 * p. Depth-free, and
// differentiable w.r.t. src only (the rotation enters as plain numbers).
WarpResult stabilize(const Tensor& src, const Mat3& rotation,
                     const Intrinsics& k);

}  // namespace md
