#pragma once

#include <vector>

#include "core/tensor.hpp"
#include "core/warp.hpp"

namespace md {

struct LossWeights {
  double alpha = 0.075;   // structural term mixing weight
  double lambda = 3.0;    // smoothness weight
  int num_scales = 4;
  void validate() const;  // alpha >= 0, lambda >= 0, num_scales >= 1
};

// 3x3 Gaussian blur (sigma 1.0), edge-replicate, per channel.
Tensor gauss3_blur(const Tensor& a);

// Per-pixel structural similarity of two [C,H,W] images in [0,1], using
// local Gaussian statistics over the 3x3 window. Product form, so
// ssim(I,I) = 1. Values lie in [-1,1].
Tensor ssim(const Tensor& a, const Tensor& b);

// Mean of x over cells where mask is 1 (channels averaged too): divides by
// mask sum times channel count, not by pixel count.
Tensor masked_mean(const Tensor& x, const Tensor& mask);

// Sum over frames of masked L1 difference minus alpha times masked mean
// structural similarity. A frame with an all-zero mask contributes 0 (warns
// on stderr).
Tensor photometric_loss(const std::vector<WarpResult>& warped,
                        const Tensor& target, double alpha);

// Mean of |Laplacian(zeta)| weighted by inverse image gradient magnitude,
// divided by mean(zeta) so the loss is invariant to depth rescaling. The
// image weight is a constant (images are data, not parameters).
Tensor smooth_loss(const Tensor& zeta, const Tensor& target_image);

// Sum over scales s of (1/2^s) * (L_p[s] + lambda * L_g[s]); s = 0 first.
Tensor total_loss(const std::vector<std::pair<Tensor, Tensor>>& per_scale,
                  const LossWeights& weights);

// Averaged-pooled image pyramid, full resolution first.
std::vector<Tensor> image_pyramid(const Tensor& image, int levels);

}  // namespace md
