#include "core/losses.hpp"

#include <cmath>
#include <iostream>

#include "core/error.hpp"

namespace md {

namespace {

constexpr double kC1 = 0.01;
constexpr double kC2 = 0.09;
constexpr double kGradEps = 0.1;  // flat-region guard for the smoothness weight

std::array<double, 9> gauss3_kernel() {
  const double q = std::exp(-0.5);  // sigma = 1.0, offsets -1..1
  const double w[3] = {q, 1.0, q};
  std::array<double, 9> k;
  double total = 0.0;
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) total += (k[y * 3 + x] = w[y] * w[x]);
  for (auto& v : k) v /= total;
  return k;
}

}  // namespace

void LossWeights::validate() const {
  if (alpha < 0.0 || lambda < 0.0 || num_scales < 1)
    throw InvalidArgument("loss weights: need alpha >= 0, lambda >= 0, num_scales >= 1");
}

Tensor gauss3_blur(const Tensor& a) {
  static const std::array<double, 9> k = gauss3_kernel();
  return stencil3x3_replicate(a, k);
}

Tensor ssim(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw InvalidArgument("ssim: shape mismatch");
  const Tensor mu_a = gauss3_blur(a);
  const Tensor mu_b = gauss3_blur(b);
  const Tensor var_a = sub(gauss3_blur(mul(a, a)), mul(mu_a, mu_a));
  const Tensor var_b = sub(gauss3_blur(mul(b, b)), mul(mu_b, mu_b));
  const Tensor cov = sub(gauss3_blur(mul(a, b)), mul(mu_a, mu_b));
  const Tensor num = mul(add(mul(mul(mu_a, mu_b), 2.0), kC1),
                         add(mul(cov, 2.0), kC2));
  const Tensor den = mul(add(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), kC1),
                         add(add(var_a, var_b), kC2));
  return div(num, den);
}

Tensor masked_mean(const Tensor& x, const Tensor& mask) {
  const int channels = x.shape().size() == 3 ? x.dim(0) : 1;
  double msum = 0.0;
  for (double m : mask.value()) msum += m;
  if (msum == 0.0) throw InvalidArgument("masked_mean: empty mask");
  return div(sum(mul(x, mask)), msum * channels);
}

Tensor photometric_loss(const std::vector<WarpResult>& warped,
                        const Tensor& target, double alpha) {
  if (warped.empty())
    throw InvalidArgument("photometric_loss: need at least one warped frame");
  Tensor acc = Tensor::scalar(0.0);
  for (const auto& w : warped) {
    double msum = 0.0;
    for (double m : w.mask.value()) msum += m;
    if (msum == 0.0) {
      std::cerr << "warning: photometric loss skipping a frame with no valid pixels\n";
      continue;
    }
    const Tensor l1 = masked_mean(md::abs(sub(w.image, mul(target, w.mask))),
                                  w.mask);
    acc = add(acc, l1);
    if (alpha != 0.0)
      acc = sub(acc, mul(masked_mean(ssim(w.image, target), w.mask), alpha));
  }
  return acc;
}

Tensor smooth_loss(const Tensor& zeta, const Tensor& target_image) {
  if (zeta.shape().size() != 2)
    throw InvalidArgument("smooth_loss: depth must be [H,W]");
  if (target_image.shape().size() != 3 ||
      target_image.dim(1) != zeta.dim(0) || target_image.dim(2) != zeta.dim(1))
    throw InvalidArgument("smooth_loss: image extents must match depth");
  for (double z : zeta.value())
    if (!(z > 0.0)) throw InvalidArgument("smooth_loss: depth must be positive");

  const int C = target_image.dim(0), H = zeta.dim(0), W = zeta.dim(1);

  // inverse gradient-magnitude weight, central differences, edge-replicate,
  // averaged over channels; plain numbers by design
  std::vector<double> wt(static_cast<size_t>(H) * W, 0.0);
  const auto& img = target_image.value();
  for (int c = 0; c < C; ++c) {
    const double* ic = img.data() + static_cast<size_t>(c) * H * W;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int xm = x > 0 ? x - 1 : 0, xp = x < W - 1 ? x + 1 : W - 1;
        const int ym = y > 0 ? y - 1 : 0, yp = y < H - 1 ? y + 1 : H - 1;
        const double gx =
            (ic[static_cast<size_t>(y) * W + xp] - ic[static_cast<size_t>(y) * W + xm]) / 2.0;
        const double gy =
            (ic[static_cast<size_t>(yp) * W + x] - ic[static_cast<size_t>(ym) * W + x]) / 2.0;
        wt[static_cast<size_t>(y) * W + x] += std::sqrt(gx * gx + gy * gy) / C;
      }
  }
  for (auto& v : wt) v = 1.0 / (v + kGradEps);
  const Tensor weight = Tensor::from_data({H, W}, std::move(wt));

  static const std::array<double, 9> lap = {0, 1, 0, 1, -4, 1, 0, 1, 0};
  const Tensor num = mean(mul(md::abs(stencil3x3_replicate(zeta, lap)), weight));
  return div(num, mean(zeta));
}

Tensor total_loss(const std::vector<std::pair<Tensor, Tensor>>& per_scale,
                  const LossWeights& weights) {
  weights.validate();
  if (static_cast<int>(per_scale.size()) != weights.num_scales)
    throw InvalidArgument("total_loss: expected " +
                          std::to_string(weights.num_scales) + " scales, got " +
                          std::to_string(per_scale.size()));
  Tensor acc = Tensor::scalar(0.0);
  double factor = 1.0;
  for (const auto& [lp, lg] : per_scale) {
    acc = add(acc, mul(add(lp, mul(lg, weights.lambda)), factor));
    factor *= 0.5;
  }
  return acc;
}

std::vector<Tensor> image_pyramid(const Tensor& image, int levels) {
  if (levels < 1) throw InvalidArgument("image_pyramid: need at least one level");
  std::vector<Tensor> out = {image};
  for (int s = 1; s < levels; ++s)
    out.push_back(downsample2x_avg(out.back()));
  return out;
}

}  // namespace md
