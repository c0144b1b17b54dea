#include "core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <utility>

#include "core/diff_pose.hpp"
#include "core/geometry.hpp"
#include "core/losses.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "core/warp.hpp"

namespace md {

namespace {

constexpr double kStep = 1e-6;
constexpr double kOpTol = 1e-4;
constexpr double kPipelineTol = 1e-3;
constexpr int kProbeTarget = 120;

struct Check {
  std::string name;
  double tol = kOpTol;
  bool expected_fail = false;
  std::vector<Tensor> leaves;
  std::function<Tensor()> build;  // rebuilds the output from current leaf values
};

Tensor leaf_uniform(Rng& rng, std::vector<int> shape, double lo, double hi) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

// Magnitudes in [margin, hi], either sign: keeps abs/relu/elu/clamp probes
// outside the h-neighborhood of their kinks.
Tensor leaf_kink_free(Rng& rng, std::vector<int> shape, double margin,
                      double hi) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v)
    x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(margin, hi);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

double weighted_sum(const std::vector<double>& y, const std::vector<double>& w) {
  double s = 0.0;
  for (size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

GradCheckEntry run_check(Check& c, Rng& rng) {
  GradCheckEntry e;
  e.op = c.name;
  e.tolerance = c.tol;
  e.expected_fail = c.expected_fail;

  Tensor y = c.build();
  std::vector<double> w(static_cast<size_t>(y.numel()));
  for (auto& x : w)
    x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.5);
  Tensor z = sum(mul(y, Tensor::from_data(y.shape(), w)));
  backward(z);

  // snapshot analytic leaf gradients before finite differencing mutates values
  std::vector<std::vector<double>> analytic(c.leaves.size());
  for (size_t i = 0; i < c.leaves.size(); ++i)
    analytic[i] = c.leaves[i].node()->grad;  // may be empty: treated as zero

  int64_t total = 0;
  for (const auto& l : c.leaves) total += l.numel();

  // probe plan: every element once while they last, then uniform extras
  std::vector<std::pair<size_t, int64_t>> probes;
  probes.reserve(static_cast<size_t>(std::max<int64_t>(total, kProbeTarget)));
  for (size_t li = 0; li < c.leaves.size(); ++li)
    for (int64_t k = 0; k < c.leaves[li].numel(); ++k) probes.emplace_back(li, k);
  if (static_cast<int64_t>(probes.size()) > kProbeTarget) {
    // deterministic subset: shuffle then truncate
    for (size_t i = probes.size(); i > 1; --i)
      std::swap(probes[i - 1],
                probes[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i)))]);
    probes.resize(kProbeTarget);
  } else {
    while (static_cast<int64_t>(probes.size()) < kProbeTarget) {
      const size_t li = static_cast<size_t>(rng.uniform_int(
          static_cast<int64_t>(c.leaves.size())));
      probes.emplace_back(li, rng.uniform_int(c.leaves[li].numel()));
    }
  }

  double max_rel = 0.0;
  for (const auto& [li, k] : probes) {
    auto& vals = c.leaves[li].mutable_value();
    const double orig = vals[static_cast<size_t>(k)];
    vals[static_cast<size_t>(k)] = orig + kStep;
    const double zp = weighted_sum(c.build().value(), w);
    vals[static_cast<size_t>(k)] = orig - kStep;
    const double zm = weighted_sum(c.build().value(), w);
    vals[static_cast<size_t>(k)] = orig;
    const double fd = (zp - zm) / (2.0 * kStep);
    const double an = analytic[li].empty() ? 0.0
                                           : analytic[li][static_cast<size_t>(k)];
    const double rel =
        std::abs(an - fd) / std::max(std::abs(an) + std::abs(fd), 1e-6);
    max_rel = std::max(max_rel, rel);
  }

  e.max_rel_err = max_rel;
  e.probes = static_cast<int>(probes.size());
  e.passed = max_rel <= c.tol;
  return e;
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck(uint64_t seed, int size) {
  Rng rng(Rng::mix(seed, 0x6a4d));
  std::vector<Check> checks;

  auto add_check = [&](std::string name, std::vector<Tensor> leaves,
                       std::function<Tensor()> build, double tol = kOpTol,
                       bool expected_fail = false) {
    checks.push_back({std::move(name), tol, expected_fail, std::move(leaves),
                      std::move(build)});
  };

  // ---- elementwise arithmetic ----
  {
    Tensor a = leaf_uniform(rng, {4, 40}, -2.0, 2.0);
    Tensor b = leaf_uniform(rng, {4, 40}, -2.0, 2.0);
    add_check("add", {a, b}, [=] { return add(a, b); });
  }
  {
    Tensor a = leaf_uniform(rng, {4, 40}, -2.0, 2.0);
    Tensor b = leaf_uniform(rng, {40}, -2.0, 2.0);
    add_check("add (broadcast)", {a, b}, [=] { return add(a, b); });
  }
  {
    Tensor a = leaf_uniform(rng, {4, 40}, -2.0, 2.0);
    Tensor b = leaf_uniform(rng, {4, 40}, -2.0, 2.0);
    add_check("sub", {a, b}, [=] { return sub(a, b); });
  }
  {
    Tensor a = leaf_uniform(rng, {4, 40}, -2.0, 2.0);
    Tensor b = leaf_uniform(rng, {4, 40}, -2.0, 2.0);
    add_check("mul", {a, b}, [=] { return mul(a, b); });
  }
  {
    Tensor a = leaf_uniform(rng, {4, 40}, -2.0, 2.0);
    Tensor b = leaf_kink_free(rng, {4, 40}, 0.4, 2.0);  // away from zero
    add_check("div", {a, b}, [=] { return div(a, b); });
  }
  {
    Tensor a = leaf_uniform(rng, {150}, -2.0, 2.0);
    add_check("add (scalar rhs)", {a}, [=] { return add(a, 1.7); });
  }
  {
    Tensor a = leaf_uniform(rng, {150}, -2.0, 2.0);
    add_check("sub (scalar lhs)", {a}, [=] { return sub(1.3, a); });
  }
  {
    Tensor a = leaf_uniform(rng, {150}, -2.0, 2.0);
    add_check("mul (scalar rhs)", {a}, [=] { return mul(a, -2.4); });
  }
  {
    Tensor a = leaf_kink_free(rng, {150}, 0.4, 2.0);
    add_check("div (scalar lhs)", {a}, [=] { return div(1.9, a); });
  }
  {
    Tensor a = leaf_uniform(rng, {150}, -2.0, 2.0);
    add_check("neg", {a}, [=] { return neg(a); });
  }

  // ---- elementwise nonlinear ----
  {
    Tensor a = leaf_kink_free(rng, {150}, 0.05, 1.5);
    add_check("abs", {a}, [=] { return abs(a); });
  }
  {
    Tensor a = leaf_uniform(rng, {150}, 0.2, 2.0);
    add_check("pow (^1.7)", {a}, [=] { return pow(a, 1.7); });
  }
  {
    Tensor a = leaf_uniform(rng, {150}, -2.0, 2.0);
    add_check("exp", {a}, [=] { return exp(a); });
  }
  {
    Tensor a = leaf_uniform(rng, {150}, 0.2, 3.0);
    add_check("log", {a}, [=] { return log(a); });
  }
  {
    Tensor a = leaf_uniform(rng, {150}, 0.1, 4.0);
    add_check("sqrt", {a}, [=] { return sqrt(a); });
  }
  {
    Tensor a = leaf_uniform(rng, {150}, -3.0, 3.0);
    add_check("sin", {a}, [=] { return sin(a); });
  }
  {
    Tensor a = leaf_uniform(rng, {150}, -3.0, 3.0);
    add_check("cos", {a}, [=] { return cos(a); });
  }
  {
    Tensor a = leaf_kink_free(rng, {150}, 0.05, 1.5);
    add_check("relu", {a}, [=] { return relu(a); });
  }
  {
    Tensor a = leaf_kink_free(rng, {150}, 0.05, 1.5);
    add_check("elu", {a}, [=] { return elu(a); });
  }
  {
    // values in [0.05, 2] with a gap around the clamp knee at 0.5
    Tensor a = leaf_uniform(rng, {150}, 0.05, 2.0);
    {
      auto& v = a.mutable_value();
      for (auto& x : v)
        if (x > 0.45 && x < 0.55) x += 0.12;
    }
    add_check("clamp_min", {a}, [=] { return clamp_min(a, 0.5); });
  }

  // ---- reductions ----
  {
    Tensor a = leaf_uniform(rng, {150}, -2.0, 2.0);
    add_check("sum", {a}, [=] { return sum(a); });
  }
  {
    Tensor a = leaf_uniform(rng, {150}, -2.0, 2.0);
    add_check("mean", {a}, [=] { return mean(a); });
  }
  {
    Tensor a = leaf_uniform(rng, {3, 8, 10}, -2.0, 2.0);
    add_check("sum (axes 0,2)", {a}, [=] { return sum(a, {0, 2}); });
  }
  {
    Tensor a = leaf_uniform(rng, {3, 8, 10}, -2.0, 2.0);
    add_check("mean (axis 1)", {a}, [=] { return mean(a, {1}); });
  }

  // ---- structured ----
  {
    Tensor x = leaf_uniform(rng, {3, 10, 12}, -1.0, 1.0);
    Tensor wt = leaf_uniform(rng, {4, 3, 3, 3}, -0.5, 0.5);
    Tensor b = leaf_uniform(rng, {4}, -0.5, 0.5);
    add_check("conv2d (stride 1)", {x, wt, b},
              [=] { return conv2d(x, wt, b, 1, 1); });
  }
  {
    Tensor x = leaf_uniform(rng, {3, 12, 12}, -1.0, 1.0);
    Tensor wt = leaf_uniform(rng, {2, 3, 3, 3}, -0.5, 0.5);
    add_check("conv2d (stride 2, no bias)", {x, wt},
              [=] { return conv2d(x, wt, Tensor(), 2, 1); });
  }
  {
    Tensor x = leaf_uniform(rng, {2, 7, 9}, -1.0, 1.0);
    add_check("upsample2x", {x}, [=] { return upsample2x(x); });
  }
  {
    Tensor x = leaf_uniform(rng, {2, 10, 12}, -1.0, 1.0);
    add_check("downsample2x_avg", {x}, [=] { return downsample2x_avg(x); });
  }
  {
    Tensor a = leaf_uniform(rng, {3, 6, 8}, -1.0, 1.0);
    Tensor b = leaf_uniform(rng, {2, 6, 8}, -1.0, 1.0);
    add_check("concat0", {a, b}, [=] { return concat0(a, b); });
  }
  {
    Tensor a = leaf_uniform(rng, {40}, -1.0, 1.0);
    add_check("element", {a}, [=] { return element(a, 17); });
  }
  {
    Tensor a = leaf_uniform(rng, {4, 6, 8}, -1.0, 1.0);
    add_check("reshape", {a}, [=] { return reshape(a, {8, 24}); });
  }
  {
    std::array<double, 9> k{};
    for (auto& x : k) x = rng.uniform(-1.0, 1.0);
    Tensor a = leaf_uniform(rng, {2, 9, 11}, -1.0, 1.0);
    add_check("stencil3x3_replicate", {a},
              [=] { return stencil3x3_replicate(a, k); });
  }

  // ---- loss building blocks ----
  {
    Tensor a = leaf_uniform(rng, {3, 9, 9}, -1.0, 1.0);
    add_check("gauss3_blur", {a}, [=] { return gauss3_blur(a); });
  }
  {
    Tensor a = leaf_uniform(rng, {3, 12, 12}, 0.1, 0.9);
    Tensor b = leaf_uniform(rng, {3, 12, 12}, 0.1, 0.9);
    add_check("ssim", {a, b}, [=] { return ssim(a, b); });
  }
  {
    Tensor x = leaf_uniform(rng, {3, 10, 10}, -1.0, 1.0);
    std::vector<double> mv(100);
    for (auto& m : mv) m = rng.uniform() < 0.7 ? 1.0 : 0.0;
    mv[0] = 1.0;  // nonempty
    Tensor mask = Tensor::from_data({10, 10}, mv);
    add_check("masked_mean", {x}, [=] { return masked_mean(x, mask); });
  }
  {
    // the inverse-gradient image weight is constant by design, so the image
    // is data here, not a probed leaf
    Tensor zeta = leaf_uniform(rng, {10, 10}, 0.5, 3.0);
    std::vector<double> iv(300);
    for (auto& x : iv) x = rng.uniform(0.05, 0.95);
    Tensor img = Tensor::from_data({3, 10, 10}, iv);
    add_check("smooth_loss", {zeta}, [=] { return smooth_loss(zeta, img); });
  }

  // ---- sampling and warping ----
  {
    Tensor src = leaf_uniform(rng, {3, 9, 9}, 0.0, 1.0);
    std::vector<double> cv(2 * 7 * 7);
    for (size_t i = 0; i < 49; ++i) {
      cv[i] = rng.uniform_int(6) + 1 + rng.uniform(0.25, 0.75);       // u
      cv[49 + i] = rng.uniform_int(6) + 1 + rng.uniform(0.25, 0.75);  // v
    }
    Tensor coords = Tensor::from_data({2, 7, 7}, cv, true);
    add_check("bilinear_sample", {src, coords}, [=] {
      // smooth image: keeps the coordinate derivative locally linear
      return bilinear_sample(gauss3_blur(src), coords).image;
    });
  }
  {
    Tensor src = leaf_uniform(rng, {3, 12, 12}, 0.0, 1.0);
    const Mat3 rot = euler_to_matrix({0.03, -0.02, 0.04});
    const Intrinsics k = Intrinsics::centered(12, 12);
    add_check("stabilize", {src},
              [=] { return stabilize(src, rot, k).image; });
  }
  {
    Tensor src = leaf_uniform(rng, {3, 12, 12}, 0.0, 1.0);
    Tensor depth = leaf_uniform(rng, {12, 12}, 3.0, 7.0);
    Tensor rx = Tensor::scalar(rng.uniform(-0.03, 0.03), true);
    Tensor ry = Tensor::scalar(rng.uniform(-0.03, 0.03), true);
    Tensor rz = Tensor::scalar(rng.uniform(-0.03, 0.03), true);
    Tensor tx = Tensor::scalar(rng.uniform(-0.2, 0.2), true);
    Tensor ty = Tensor::scalar(rng.uniform(-0.2, 0.2), true);
    Tensor tz = Tensor::scalar(rng.uniform(0.3, 0.6), true);
    const Intrinsics k = Intrinsics::centered(12, 12);
    add_check("inverse_warp", {src, depth, rx, ry, rz, tx, ty, tz}, [=] {
      DiffPose pose = DiffPose::from_euler(rx, ry, rz, tx, ty, tz);
      return inverse_warp(gauss3_blur(src), depth, pose, k).image;
    });
  }
  {
    // euler poses composed, inverted, and displacement-normalized
    std::vector<Tensor> s(12);
    for (int i = 0; i < 12; ++i) {
      const bool angle = (i % 6) < 3;
      s[static_cast<size_t>(i)] = Tensor::scalar(
          angle ? rng.uniform(-0.2, 0.2)
                : (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.3, 0.9),
          true);
    }
    NominalDisplacement nd;
    add_check("pose chain (compose/normalize)", s, [=] {
      DiffPose p1 = DiffPose::from_euler(s[0], s[1], s[2], s[3], s[4], s[5]);
      DiffPose p2 = DiffPose::from_euler(s[6], s[7], s[8], s[9], s[10], s[11]);
      DiffPose q = compose(inverse(p1), p2);
      auto normed = normalize_translations({q, p2}, 0, nd);
      Tensor y;
      for (const auto& pose : normed) {
        for (const auto& r : pose.R) y = y.defined() ? concat0(y, r) : r;
        for (const auto& t : pose.t) y = concat0(y, t);
      }
      return y;
    });
  }

  // ---- end-to-end loss ----
  {
    const int n = std::max(8, size);
    const Intrinsics k0 = Intrinsics::centered(n, n);
    Tensor zeta = leaf_uniform(rng, {n, n}, 3.0, 7.0);
    // images are data: smoothed constant noise (the smoothness image weight
    // drops their gradient by design, so they are not probed)
    auto make_image = [&] {
      std::vector<double> iv(static_cast<size_t>(3 * n * n));
      for (auto& x : iv) x = rng.uniform(0.0, 1.0);
      Tensor raw = Tensor::from_data({3, n, n}, std::move(iv));
      return Tensor::from_data({3, n, n},
                               gauss3_blur(gauss3_blur(raw)).value());
    };
    Tensor i0 = make_image(), i1 = make_image(), i2 = make_image();
    // both warped frames sit forward of the target in time, so both relative
    // translations point the same way and every pyramid level keeps a
    // populated mask
    std::vector<Tensor> pose_leaves;
    for (int f = 0; f < 2; ++f) {
      for (int j = 0; j < 3; ++j)
        pose_leaves.push_back(Tensor::scalar(rng.uniform(-0.03, 0.03), true));
      pose_leaves.push_back(Tensor::scalar(rng.uniform(-0.15, 0.15), true));
      pose_leaves.push_back(Tensor::scalar(rng.uniform(-0.15, 0.15), true));
      pose_leaves.push_back(
          Tensor::scalar(rng.uniform(0.8, 1.2) * (f == 0 ? 1.0 : 2.0), true));
    }
    std::vector<Tensor> leaves = {zeta};
    leaves.insert(leaves.end(), pose_leaves.begin(), pose_leaves.end());
    NominalDisplacement nd;
    LossWeights weights;
    add_check(
        "pipeline (multi-scale total loss)", leaves,
        [=] {
          // target frame 0; frames 1 and 2 warped; frame 1 is the reference
          auto p = [&](int f) {
            const size_t b = static_cast<size_t>(6 * f);
            return DiffPose::from_euler(pose_leaves[b], pose_leaves[b + 1],
                                        pose_leaves[b + 2], pose_leaves[b + 3],
                                        pose_leaves[b + 4], pose_leaves[b + 5]);
          };
          auto normed = normalize_translations({p(0), p(1)}, 0, nd);
          Tensor target = i0;
          std::vector<Tensor> srcs = {i1, i2};
          Tensor z = zeta;
          Intrinsics k = k0;
          std::vector<std::pair<Tensor, Tensor>> per_scale;
          for (int s = 0; s < weights.num_scales; ++s) {
            std::vector<WarpResult> warped;
            for (size_t f = 0; f < srcs.size(); ++f)
              warped.push_back(inverse_warp(srcs[f], z, normed[f], k));
            per_scale.emplace_back(
                photometric_loss(warped, target, weights.alpha),
                smooth_loss(z, target));
            if (s + 1 == weights.num_scales) break;
            for (auto& im : srcs) im = downsample2x_avg(im);
            target = downsample2x_avg(target);
            const int hh = z.dim(0) / 2, ww = z.dim(1) / 2;
            z = reshape(downsample2x_avg(reshape(z, {1, z.dim(0), z.dim(1)})),
                        {hh, ww});
            k = halve(k);
          }
          return total_loss(per_scale, weights);
        },
        kPipelineTol);
  }

  // ---- negative control ----
  {
    Tensor a = leaf_uniform(rng, {120}, -2.0, 2.0);
    Tensor b = leaf_uniform(rng, {120}, -2.0, 2.0);
    add_check(
        "corrupted mul (control)", {a, b},
        [=] {
          std::vector<double> v(a.value().size());
          for (size_t i = 0; i < v.size(); ++i)
            v[i] = a.value()[i] * b.value()[i];
          return make_op(
              a.shape(), std::move(v), {a, b},
              [](detail::Node& node) {
                auto& pa = *node.parents[0];
                auto& pb = *node.parents[1];
                pa.ensure_grad();
                pb.ensure_grad();
                for (size_t i = 0; i < node.grad.size(); ++i) {
                  // wrong on purpose: scaled by 2.2
                  pa.grad[i] += 2.2 * node.grad[i] * pb.value[i];
                  pb.grad[i] += 2.2 * node.grad[i] * pa.value[i];
                }
              },
              "corrupted_mul");
        },
        kOpTol, true);
  }

  std::vector<GradCheckEntry> entries;
  entries.reserve(checks.size());
  for (auto& c : checks) entries.push_back(run_check(c, rng));
  return entries;
}

bool gradcheck_ok(const std::vector<GradCheckEntry>& entries) {
  if (entries.empty()) return false;
  bool saw_control = false;
  for (const auto& e : entries) {
    if (e.expected_fail) {
      saw_control = true;
      if (e.passed) return false;  // corrupted backward slipped through
    } else if (!e.passed) {
      return false;
    }
  }
  return saw_control;
}

std::string gradcheck_table(const std::vector<GradCheckEntry>& entries) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-36s %12s %9s %7s  %s\n", "op",
                "max_rel_err", "tol", "probes", "status");
  out += line;
  for (const auto& e : entries) {
    const char* status = e.expected_fail
                             ? (e.passed ? "FAIL (control passed)"
                                         : "fail (expected)")
                             : (e.passed ? "ok" : "FAIL");
    std::snprintf(line, sizeof(line), "%-36s %12.3e %9.0e %7d  %s\n",
                  e.op.c_str(), e.max_rel_err, e.tolerance, e.probes, status);
    out += line;
  }
  return out;
}

}  // namespace md
