#include <cmath>

#include "core/diff_pose.hpp"
#include "core/error.hpp"
#include "core/geometry.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "core/warp.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace md;
using mdtest::fd_central;
using mdtest::grad_close;

namespace {

Tensor random_image(Rng& rng, int c, int h, int w, double lo = 0.0,
                    double hi = 1.0) {
  auto t = Tensor::zeros({c, h, w});
  for (auto& v : t.mutable_value()) v = rng.uniform(lo, hi);
  return t;
}

double masked_mse(const Tensor& a, const Tensor& b, const Tensor& mask,
                  int margin) {
  const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
  double acc = 0.0;
  int64_t cnt = 0;
  for (int y = margin; y < H - margin; ++y)
    for (int x = margin; x < W - margin; ++x) {
      if (mask.value()[static_cast<size_t>(y) * W + x] == 0.0) continue;
      for (int c = 0; c < C; ++c) {
        const double d = a.value()[(static_cast<size_t>(c) * H + y) * W + x] -
                         b.value()[(static_cast<size_t>(c) * H + y) * W + x];
        acc += d * d;
        ++cnt;
      }
    }
  REQUIRE(cnt > 0);
  return acc / cnt;
}

}  // namespace

TEST_CASE("bilinear sampling closed forms") {
  auto src = Tensor::from_data({1, 2, 2}, {0, 1, 2, 3});

  auto at = [&](double u, double v) {
    auto r = bilinear_sample(src, Tensor::from_data({2, 1, 1}, {u, v}));
    return std::pair<double, double>(r.image.item(), r.mask.item());
  };

  CHECK(at(0.5, 0.5).first == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(at(-1, -1).first == 0.0);
  CHECK(at(-1, -1).second == 0.0);
  CHECK(at(0.5, 0.5).second == 1.0);

  // integer lattice points reproduce the source exactly
  Rng rng(2);
  auto big = random_image(rng, 2, 4, 5);
  std::vector<double> cs;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) cs.push_back(x);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) cs.push_back(y);
  auto r = bilinear_sample(big, Tensor::from_data({2, 4, 5}, cs));
  CHECK(mdtest::bits_equal(r.image.value(), big.value()));
  for (double m : r.mask.value()) CHECK(m == 1.0);
}

TEST_CASE("bilinear sampling gradients match finite differences") {
  Rng rng(13);
  auto src = random_image(rng, 2, 5, 6);
  src.set_requires_grad(true);
  auto coords = Tensor::zeros({2, 3, 4}, true);
  {
    auto& cv = coords.mutable_value();
    const int64_t n = 12;
    for (int64_t i = 0; i < n; ++i) {
      cv[i] = rng.uniform(0.1, 4.85);      // u, off the integer lattice
      cv[n + i] = rng.uniform(0.1, 3.85);  // v
    }
  }
  auto build = [&] {
    auto r = bilinear_sample(src, coords);
    return mean(mul(r.image, r.image)).item();
  };
  auto r = bilinear_sample(src, coords);
  md::backward(mean(mul(r.image, r.image)));
  for (int64_t i = 0; i < src.numel(); i += 3)
    CHECK(grad_close(src.grad()[i], fd_central(build, src, i)));
  for (int64_t i = 0; i < coords.numel(); ++i)
    CHECK(grad_close(coords.grad()[i], fd_central(build, coords, i)));
}

TEST_CASE("differentiable pose matches the plain pose algebra") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Vec3 an = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const Vec3 tr = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const auto d = DiffPose::from_euler(
        Tensor::scalar(an[0]), Tensor::scalar(an[1]), Tensor::scalar(an[2]),
        Tensor::scalar(tr[0]), Tensor::scalar(tr[1]), Tensor::scalar(tr[2]));
    const Pose p = Pose::from_euler(an, tr);
    const Pose pe = d.eval();
    for (int i = 0; i < 9; ++i) CHECK(pe.R[i] == doctest::Approx(p.R[i]).epsilon(1e-12));
    for (int i = 0; i < 3; ++i) CHECK(pe.t[i] == doctest::Approx(p.t[i]).epsilon(1e-12));

    const Vec3 an2 = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const Vec3 tr2 = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const Pose q = Pose::from_euler(an2, tr2);
    const Pose got = md::compose(d, DiffPose::constant(q)).eval();
    const Pose want = md::compose(p, q);
    for (int i = 0; i < 9; ++i) CHECK(got.R[i] == doctest::Approx(want.R[i]).epsilon(1e-12));
    for (int i = 0; i < 3; ++i) CHECK(got.t[i] == doctest::Approx(want.t[i]).epsilon(1e-12));

    const Pose invd = md::inverse(d).eval();
    const Pose invp = md::inverse(p);
    for (int i = 0; i < 9; ++i) CHECK(invd.R[i] == doctest::Approx(invp.R[i]).epsilon(1e-12));
    for (int i = 0; i < 3; ++i) CHECK(invd.t[i] == doctest::Approx(invp.t[i]).epsilon(1e-12));
  }
}

TEST_CASE("differentiable translation normalization") {
  NominalDisplacement nd;
  std::vector<DiffPose> poses;
  poses.push_back(DiffPose::constant(Pose{mat_identity(), {1, 2, 3}}));
  poses.push_back(DiffPose::constant(Pose{mat_identity(), {0, 0, 4}}));
  const auto out = md::normalize_translations(poses, 1, nd);
  CHECK(translation_norm(out[1]).item() == doctest::Approx(1.0).epsilon(1e-5));

  std::vector<Pose> plain = {poses[0].eval(), poses[1].eval()};
  const auto want = md::normalize_translations(plain, 1, nd);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(out[i].t[j].item() == doctest::Approx(want[i].t[j]).epsilon(1e-12));
}

TEST_CASE("pose expression gradients match finite differences") {
  Rng rng(21);
  auto params = Tensor::zeros({6}, true);
  for (auto& v : params.mutable_value()) v = rng.uniform(-0.5, 0.5);
  auto build_graph = [&] {
    auto d = DiffPose::from_euler(element(params, 0), element(params, 1),
                                  element(params, 2), element(params, 3),
                                  element(params, 4), element(params, 5));
    auto c = md::compose(d, md::inverse(d));  // gradient-rich, value-trivial
    auto e = md::compose(d, DiffPose::constant(Pose::from_euler({0.1, -0.2, 0.3},
                                                                {1, 0, -1})));
    Tensor acc = translation_norm(e);
    for (int i = 0; i < 9; ++i) acc = add(acc, mul(e.R[i], 0.3 + 0.1 * i));
    for (int i = 0; i < 3; ++i) acc = add(acc, mul(c.t[i], 0.7));
    return acc;
  };
  md::backward(build_graph());
  auto f = [&] { return build_graph().item(); };
  for (int64_t i = 0; i < 6; ++i)
    CHECK(grad_close(params.grad()[i], fd_central(f, params, i)));
}

TEST_CASE("identity-pose warp reproduces the source with full mask") {
  Rng rng(17);
  const int H = 12, W = 16;
  auto src = random_image(rng, 3, H, W);
  auto depth = Tensor::zeros({H, W});
  for (auto& v : depth.mutable_value()) v = rng.uniform(0.5, 5.0);
  const auto r = inverse_warp(src, depth, DiffPose::identity(),
                              Intrinsics::centered(W, H));
  for (int64_t i = 0; i < src.numel(); ++i)
    CHECK(std::abs(r.image.value()[i] - src.value()[i]) <= 1e-6);
  for (double m : r.mask.value()) CHECK(m == 1.0);
}

TEST_CASE("constant-depth plane with x-translation shifts uniformly") {
  const int H = 8, W = 16;
  const Intrinsics k = Intrinsics::centered(W, H);
  const double d = 2.0, delta = 0.5;
  const double shift = k.fx * delta / d;  // 4 pixels
  REQUIRE(shift == doctest::Approx(4.0));

  Rng rng(29);
  auto src = random_image(rng, 1, H, W);
  auto depth = Tensor::full({H, W}, d);
  const auto r = inverse_warp(
      src, depth, DiffPose::constant(Pose{mat_identity(), {delta, 0, 0}}), k);
  const int s = static_cast<int>(shift);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const auto i = static_cast<size_t>(y) * W + x;
      if (x + s <= W - 1) {
        CHECK(r.mask.value()[i] == 1.0);
        CHECK(r.image.value()[i] ==
              doctest::Approx(src.value()[i + s]).epsilon(1e-9));
      } else {
        CHECK(r.mask.value()[i] == 0.0);
        CHECK(r.image.value()[i] == 0.0);
      }
    }

  // fractional shift, checked against direct interpolation of a linear ramp
  auto ramp = Tensor::zeros({1, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      ramp.mutable_value()[static_cast<size_t>(y) * W + x] = 0.05 * x + 0.01 * y;
  const double delta2 = 0.35;
  const double shift2 = k.fx * delta2 / d;
  const auto r2 = inverse_warp(
      ramp, depth, DiffPose::constant(Pose{mat_identity(), {delta2, 0, 0}}), k);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const auto i = static_cast<size_t>(y) * W + x;
      if (x + shift2 <= W - 1) {
        CHECK(r2.mask.value()[i] == 1.0);
        CHECK(r2.image.value()[i] ==
              doctest::Approx(0.05 * (x + shift2) + 0.01 * y).epsilon(1e-9));
      }
    }
}

TEST_CASE("depth independence holds exactly when translation is zero") {
  Rng rng(37);
  const int H = 10, W = 10;
  const Intrinsics k = Intrinsics::centered(W, H);
  auto src = random_image(rng, 1, H, W);
  auto d1 = Tensor::zeros({H, W});
  for (auto& v : d1.mutable_value()) v = rng.uniform(0.5, 3.0);
  auto d2 = Tensor::zeros({H, W});
  for (int64_t i = 0; i < d1.numel(); ++i)
    d2.mutable_value()[i] = 2.0 * d1.value()[i];

  const Pose rot = Pose::from_euler({0.03, -0.05, 0.02}, {0, 0, 0});
  const auto a = inverse_warp(src, d1, DiffPose::constant(rot), k);
  const auto b = inverse_warp(src, d2, DiffPose::constant(rot), k);
  for (int64_t i = 0; i < a.image.numel(); ++i)
    CHECK(std::abs(a.image.value()[i] - b.image.value()[i]) < 1e-9);

  const Pose with_t = Pose::from_euler({0.03, -0.05, 0.02}, {0.3, 0, 0});
  const auto c = inverse_warp(src, d1, DiffPose::constant(with_t), k);
  const auto e = inverse_warp(src, d2, DiffPose::constant(with_t), k);
  double max_diff = 0.0;
  for (int64_t i = 0; i < c.image.numel(); ++i)
    if (c.mask.value()[i % (H * W)] == 1.0 && e.mask.value()[i % (H * W)] == 1.0)
      max_diff = std::max(max_diff,
                          std::abs(c.image.value()[i] - e.image.value()[i]));
  CHECK(max_diff > 1e-3);  // parallax must show up
}

TEST_CASE("stabilization equals full warp with zero translation") {
  Rng rng(41);
  const int H = 12, W = 16;
  const Intrinsics k = Intrinsics::centered(W, H);
  for (int trial = 0; trial < 20; ++trial) {
    auto src = random_image(rng, 1, H, W);
    auto depth = Tensor::zeros({H, W});
    for (auto& v : depth.mutable_value()) v = rng.uniform(0.4, 8.0);
    const Mat3 rot = euler_to_matrix({rng.uniform(-0.15, 0.15),
                                      rng.uniform(-0.15, 0.15),
                                      rng.uniform(-0.15, 0.15)});
    const auto s = stabilize(src, rot, k);
    const auto w = inverse_warp(src, depth, DiffPose::constant(Pose{rot, {0, 0, 0}}), k);
    for (int64_t i = 0; i < s.image.numel(); ++i)
      CHECK(std::abs(s.image.value()[i] - w.image.value()[i]) <= 1e-9);
    for (int64_t i = 0; i < s.mask.numel(); ++i)
      CHECK(s.mask.value()[i] == w.mask.value()[i]);
  }
}

TEST_CASE("identity stabilization is exact") {
  Rng rng(43);
  auto src = random_image(rng, 2, 6, 7);
  const auto s = stabilize(src, mat_identity(), Intrinsics::centered(7, 6));
  CHECK(mdtest::bits_equal(s.image.value(), src.value()));
}

TEST_CASE("stabilize round trip restores smooth images") {
  const int H = 32, W = 32;
  const Intrinsics k = Intrinsics::centered(W, H);
  auto img = Tensor::zeros({1, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      img.mutable_value()[static_cast<size_t>(y) * W + x] =
          0.5 + 0.25 * std::sin(2 * M_PI * x / W) * std::cos(2 * M_PI * y / H);

  const Mat3 r = euler_to_matrix({0.02, -0.03, 0.04});
  const auto once = stabilize(img, r, k);
  const auto back = stabilize(once.image, mat_transpose(r), k);
  const double mse = masked_mse(back.image, img, back.mask, 6);
  const double psnr = 10.0 * std::log10(1.0 / mse);
  CHECK(psnr >= 30.0);
}

TEST_CASE("photometric gradient w.r.t. depth matches finite differences") {
  Rng rng(53);
  const int H = 16, W = 16;
  const Intrinsics k = Intrinsics::centered(W, H);
  auto src = Tensor::zeros({1, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      src.mutable_value()[static_cast<size_t>(y) * W + x] =
          0.5 + 0.3 * std::sin(0.7 * x + 0.4 * y) + 0.1 * std::cos(1.3 * y);
  auto target = random_image(rng, 1, H, W);
  auto depth = Tensor::zeros({H, W}, true);
  for (auto& v : depth.mutable_value()) v = rng.uniform(1.0, 3.0);
  const Pose motion = Pose::from_euler({0.01, -0.02, 0.005}, {0.08, -0.03, 0.05});

  auto build_loss = [&] {
    auto r = inverse_warp(src, depth, DiffPose::constant(motion), k);
    auto diff = md::abs(sub(r.image, mul(target, r.mask)));
    return div(sum(diff), sum(r.mask));
  };
  md::backward(build_loss());
  auto f = [&] { return build_loss().item(); };
  int checked = 0;
  for (int64_t i = 0; i < depth.numel(); i += 2) {
    const double fd = fd_central(f, depth, i);
    CHECK(grad_close(depth.grad()[i], fd, 1e-3, 1e-6));
    ++checked;
  }
  CHECK(checked >= 100);
}
