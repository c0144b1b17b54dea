#include "core/warp.hpp"

#include <cmath>
#include <string>

#include "core/error.hpp"

namespace md {

namespace {

// Out-of-bounds tolerance: keeps the identity warp's border pixels valid in
// the presence of rounding.
constexpr double kBoundEps = 1e-6;

struct SamplePlan {
  // per output cell
  std::vector<uint8_t> valid;
  std::vector<int> x0, y0;
  std::vector<double> wx, wy;
  std::vector<uint8_t> clamped_u, clamped_v;
  int c = 0, h = 0, w = 0;    // src extents
  int ho = 0, wo = 0;         // output extents
};

}  // namespace

Tensor pixel_u_grid(int h, int w) {
  std::vector<double> d(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) d[static_cast<size_t>(y) * w + x] = x;
  return Tensor::from_data({h, w}, std::move(d));
}

Tensor pixel_v_grid(int h, int w) {
  std::vector<double> d(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) d[static_cast<size_t>(y) * w + x] = y;
  return Tensor::from_data({h, w}, std::move(d));
}

WarpResult bilinear_sample(const Tensor& src, const Tensor& coords) {
  if (src.shape().size() != 3)
    throw InvalidArgument("bilinear_sample: src must be [C,H,W]");
  if (coords.shape().size() != 3 || coords.dim(0) != 2)
    throw InvalidArgument("bilinear_sample: coords must be [2,H,W]");
  const int C = src.dim(0), H = src.dim(1), W = src.dim(2);
  if (H < 2 || W < 2)
    throw InvalidArgument("bilinear_sample: src extents must be >= 2");
  const int Ho = coords.dim(1), Wo = coords.dim(2);
  const int64_t n = static_cast<int64_t>(Ho) * Wo;

  auto plan = std::make_shared<SamplePlan>();
  plan->c = C;
  plan->h = H;
  plan->w = W;
  plan->ho = Ho;
  plan->wo = Wo;
  plan->valid.resize(n);
  plan->x0.resize(n);
  plan->y0.resize(n);
  plan->wx.resize(n);
  plan->wy.resize(n);
  plan->clamped_u.resize(n);
  plan->clamped_v.resize(n);

  const auto& cv = coords.value();
  std::vector<double> mask(n);
  for (int64_t i = 0; i < n; ++i) {
    const double u = cv[i];
    const double v = cv[n + i];
    const bool ok = std::isfinite(u) && std::isfinite(v) &&
                    u >= -kBoundEps && u <= W - 1 + kBoundEps &&
                    v >= -kBoundEps && v <= H - 1 + kBoundEps;
    plan->valid[i] = ok;
    mask[i] = ok ? 1.0 : 0.0;
    if (!ok) {
      plan->x0[i] = plan->y0[i] = 0;
      plan->wx[i] = plan->wy[i] = 0.0;
      plan->clamped_u[i] = plan->clamped_v[i] = 1;
      continue;
    }
    const double uc = u < 0.0 ? 0.0 : (u > W - 1 ? W - 1 : u);
    const double vc = v < 0.0 ? 0.0 : (v > H - 1 ? H - 1 : v);
    plan->clamped_u[i] = uc != u;
    plan->clamped_v[i] = vc != v;
    int x0 = static_cast<int>(std::floor(uc));
    int y0 = static_cast<int>(std::floor(vc));
    if (x0 > W - 2) x0 = W - 2;
    if (y0 > H - 2) y0 = H - 2;
    plan->x0[i] = x0;
    plan->y0[i] = y0;
    plan->wx[i] = uc - x0;
    plan->wy[i] = vc - y0;
  }

  const auto& sv = src.value();
  std::vector<double> out(static_cast<size_t>(C) * n, 0.0);
  for (int c = 0; c < C; ++c) {
    const double* sc = sv.data() + static_cast<size_t>(c) * H * W;
    double* oc = out.data() + static_cast<size_t>(c) * n;
    for (int64_t i = 0; i < n; ++i) {
      if (!plan->valid[i]) continue;
      const int x0 = plan->x0[i], y0 = plan->y0[i];
      const double wx = plan->wx[i], wy = plan->wy[i];
      const double s00 = sc[static_cast<size_t>(y0) * W + x0];
      const double s01 = sc[static_cast<size_t>(y0) * W + x0 + 1];
      const double s10 = sc[static_cast<size_t>(y0 + 1) * W + x0];
      const double s11 = sc[static_cast<size_t>(y0 + 1) * W + x0 + 1];
      oc[i] = (1 - wy) * ((1 - wx) * s00 + wx * s01) +
              wy * ((1 - wx) * s10 + wx * s11);
    }
  }

  WarpResult r;
  r.image = make_op(
      {C, Ho, Wo}, std::move(out), {src, coords},
      [plan](detail::Node& self) {
        detail::Node* ps = self.parents[0].get();
        detail::Node* pc = self.parents[1].get();
        const int C = plan->c, H = plan->h, W = plan->w;
        const int64_t n = static_cast<int64_t>(plan->ho) * plan->wo;
        if (ps->requires_grad) {
          ps->ensure_grad();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
          for (int c = 0; c < C; ++c) {
            // channels write disjoint slices, so parallelism stays exact
            double* gs = ps->grad.data() + static_cast<size_t>(c) * H * W;
            const double* go = self.grad.data() + static_cast<size_t>(c) * n;
            for (int64_t i = 0; i < n; ++i) {
              if (!plan->valid[i]) continue;
              const double g = go[i];
              if (g == 0.0) continue;
              const int x0 = plan->x0[i], y0 = plan->y0[i];
              const double wx = plan->wx[i], wy = plan->wy[i];
              gs[static_cast<size_t>(y0) * W + x0] += g * (1 - wy) * (1 - wx);
              gs[static_cast<size_t>(y0) * W + x0 + 1] += g * (1 - wy) * wx;
              gs[static_cast<size_t>(y0 + 1) * W + x0] += g * wy * (1 - wx);
              gs[static_cast<size_t>(y0 + 1) * W + x0 + 1] += g * wy * wx;
            }
          }
        }
        if (pc->requires_grad) {
          pc->ensure_grad();
          const auto& sv = ps->value;
          for (int64_t i = 0; i < n; ++i) {
            if (!plan->valid[i]) continue;
            const int x0 = plan->x0[i], y0 = plan->y0[i];
            const double wx = plan->wx[i], wy = plan->wy[i];
            double du = 0.0, dv = 0.0;
            for (int c = 0; c < C; ++c) {
              const double g = self.grad[static_cast<size_t>(c) * n + i];
              if (g == 0.0) continue;
              const double* sc = sv.data() + static_cast<size_t>(c) * H * W;
              const double s00 = sc[static_cast<size_t>(y0) * W + x0];
              const double s01 = sc[static_cast<size_t>(y0) * W + x0 + 1];
              const double s10 = sc[static_cast<size_t>(y0 + 1) * W + x0];
              const double s11 = sc[static_cast<size_t>(y0 + 1) * W + x0 + 1];
              du += g * ((1 - wy) * (s01 - s00) + wy * (s11 - s10));
              dv += g * ((1 - wx) * (s10 - s00) + wx * (s11 - s01));
            }
            if (!plan->clamped_u[i]) pc->grad[i] += du;
            if (!plan->clamped_v[i]) pc->grad[n + i] += dv;
          }
        }
      },
      "bilinear_sample");
  r.mask = Tensor::from_data({Ho, Wo}, std::move(mask));
  return r;
}

WarpResult inverse_warp(const Tensor& src, const Tensor& depth,
                        const DiffPose& pose, const Intrinsics& k,
                        double zmin) {
  if (src.shape().size() != 3) throw InvalidArgument("inverse_warp: src must be [C,H,W]");
  if (depth.shape().size() != 2)
    throw InvalidArgument("inverse_warp: depth must be [H,W]");
  const int H = src.dim(1), W = src.dim(2);
  if (depth.dim(0) != H || depth.dim(1) != W)
    throw InvalidArgument("inverse_warp: depth extents must match src");
  k.validate();
  for (double z : depth.value())
    if (!(z > 0.0))
      throw InvalidArgument("inverse_warp: depth must be positive, got " +
                            std::to_string(z));

  // back-project the target grid through the depth map
  const Tensor dx = mul(sub(pixel_u_grid(H, W), k.cx), 1.0 / k.fx);
  const Tensor dy = mul(sub(pixel_v_grid(H, W), k.cy), 1.0 / k.fy);
  const Tensor X = mul(dx, depth);
  const Tensor Y = mul(dy, depth);
  const Tensor& Z = depth;

  // rigid motion with scalar-tensor pose entries broadcast over the grid
  const auto& R = pose.R;
  const auto& t = pose.t;
  const Tensor Xc = add(add(add(mul(X, R[0]), mul(Y, R[1])), mul(Z, R[2])), t[0]);
  const Tensor Yc = add(add(add(mul(X, R[3]), mul(Y, R[4])), mul(Z, R[5])), t[1]);
  const Tensor Zc = add(add(add(mul(X, R[6]), mul(Y, R[7])), mul(Z, R[8])), t[2]);

  // behind-camera cells: mask constant, coords pushed far out of bounds so
  // the sampler rejects them
  std::vector<double> mz(Zc.numel());
  for (int64_t i = 0; i < Zc.numel(); ++i) mz[i] = Zc.value()[i] > zmin ? 1.0 : 0.0;
  const Tensor zmask = Tensor::from_data({H, W}, std::move(mz));
  const Tensor offgrid = mul(sub(1.0, zmask), -10.0);

  const Tensor Zs = clamp_min(Zc, zmin);
  const Tensor uc = add(div(mul(Xc, k.fx), Zs), k.cx);
  const Tensor vc = add(div(mul(Yc, k.fy), Zs), k.cy);
  const Tensor um = add(mul(uc, zmask), offgrid);
  const Tensor vm = add(mul(vc, zmask), offgrid);

  const Tensor coords =
      concat0(reshape(um, {1, H, W}), reshape(vm, {1, H, W}));
  return bilinear_sample(src, coords);
}

WarpResult stabilize(const Tensor& src, const Mat3& rotation,
                     const Intrinsics& k) {
  if (src.shape().size() != 3) throw InvalidArgument("stabilize: src must be [C,H,W]");
  k.validate();
  const int H = src.dim(1), W = src.dim(2);
  std::vector<double> coords(2 * static_cast<size_t>(H) * W);
  const int64_t n = static_cast<int64_t>(H) * W;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const Vec3 p = mat_apply(rotation, k.unproject(x, y));
      const int64_t i = static_cast<int64_t>(y) * W + x;
      if (p[2] > 1e-6) {
        double u, v;
        k.project(p, u, v);
        coords[i] = u;
        coords[n + i] = v;
      } else {
        coords[i] = coords[n + i] = -10.0;
      }
    }
  return bilinear_sample(src, Tensor::from_data({2, H, W}, std::move(coords)));
}

}  // namespace md
