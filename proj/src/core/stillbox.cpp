#include "core/stillbox.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace md {

namespace {

constexpr double kRayEps = 1e-6;
constexpr double kPi = 3.14159265358979323846;
constexpr double kClearance = 0.7;  // camera-to-primitive margin, world units
// image-space y points down, so "up" is -y; the light shines from above
const Vec3 kLightDir = {0.37139067635410372, -0.74278135270820744,
                        -0.55708601453115558};  // normalize(0.4, -0.8, -0.6)
constexpr double kAmbient = 0.35;
const Vec3 kSkyColor = {0.6, 0.75, 0.95};

double hash01(uint64_t seed, int64_t x, int64_t y, int64_t z) {
  uint64_t h = Rng::mix(seed, static_cast<uint64_t>(x) * 0x9e3779b97f4a7c15ULL ^
                                  static_cast<uint64_t>(y) * 0xc2b2ae3d27d4eb4fULL ^
                                  static_cast<uint64_t>(z) * 0x165667b19e3779f9ULL);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Trilinearly interpolated lattice noise in [0,1].
double value_noise(uint64_t seed, double x, double y, double z) {
  const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
  const int64_t ix = static_cast<int64_t>(fx), iy = static_cast<int64_t>(fy),
                iz = static_cast<int64_t>(fz);
  const double tx = smoothstep(x - fx), ty = smoothstep(y - fy),
               tz = smoothstep(z - fz);
  double c[2][2][2];
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        c[dz][dy][dx] = hash01(seed, ix + dx, iy + dy, iz + dz);
  auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
  const double x00 = lerp(c[0][0][0], c[0][0][1], tx);
  const double x01 = lerp(c[0][1][0], c[0][1][1], tx);
  const double x10 = lerp(c[1][0][0], c[1][0][1], tx);
  const double x11 = lerp(c[1][1][0], c[1][1][1], tx);
  const double y0 = lerp(x00, x01, ty);
  const double y1 = lerp(x10, x11, ty);
  return lerp(y0, y1, tz);
}

// footprint: pixel size in texture-feature units at the hit, grown at
// grazing incidence. Patterns below pixel scale alias under resampling, so
// albedo() fades them toward their mean color (analytic prefilter).
double texel_footprint(double tau, const Vec3& dir, const Vec3& normal,
                       double fx, double tex_scale) {
  const double dn = norm3(dir);
  const double grazing = std::max(std::abs(dot3(normal, dir)) / dn, 0.05);
  return tau * dn / (fx * grazing * tex_scale);
}

Vec3 albedo(const TextureSpec& tex, const Vec3& world_p, const Vec3& anchor,
            double footprint) {
  const double inv = 1.0 / tex.scale;
  const double qx = (world_p[0] - anchor[0]) * inv + tex.offset[0];
  const double qy = (world_p[1] - anchor[1]) * inv + tex.offset[1];
  const double qz = (world_p[2] - anchor[2]) * inv + tex.offset[2];
  double n;
  if (tex.kind == TextureKind::kChecker) {
    // soft-edged parity checker; hard edges alias under resampling
    const double p = std::sin(kPi * qx) * std::sin(kPi * qy) * std::sin(kPi * qz);
    n = 0.5 + 0.5 * std::tanh(2.5 * p);
  } else {
    // two octaves of value noise
    n = 0.65 * value_noise(tex.hash_seed, qx, qy, qz) +
        0.35 * value_noise(tex.hash_seed + 1, 2.0 * qx + 17.3,
                           2.0 * qy + 11.1, 2.0 * qz + 5.7);
  }
  const double blend = std::clamp((footprint - 0.3) / 0.5, 0.0, 1.0);
  n = n + (0.5 - n) * blend;
  Vec3 out;
  for (int i = 0; i < 3; ++i)
    out[i] = tex.color_a[i] + (tex.color_b[i] - tex.color_a[i]) * n;
  return out;
}

bool hit_sphere(const PrimitiveSpec& p, const Vec3& o, const Vec3& d,
                double& tau, Vec3& normal) {
  const double r = p.half_size[0];
  const Vec3 oc = sub3(o, p.center);
  const double a = dot3(d, d);
  const double b = 2.0 * dot3(d, oc);
  const double c = dot3(oc, oc) - r * r;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return false;
  const double s = std::sqrt(disc);
  double t = (-b - s) / (2.0 * a);
  if (t <= kRayEps) t = (-b + s) / (2.0 * a);
  if (t <= kRayEps) return false;
  tau = t;
  const Vec3 hp = add3(o, scale3(d, t));
  normal = scale3(sub3(hp, p.center), 1.0 / r);
  return true;
}

bool hit_box(const PrimitiveSpec& p, const Vec3& o, const Vec3& d, double& tau,
             Vec3& normal) {
  double tnear = -kInf, tfar = kInf;
  int axis = -1;
  for (int i = 0; i < 3; ++i) {
    const double lo = p.center[i] - p.half_size[i];
    const double hi = p.center[i] + p.half_size[i];
    // IEEE infinities give the right slab interval when d[i] == 0
    double t1 = (lo - o[i]) / d[i];
    double t2 = (hi - o[i]) / d[i];
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > tnear) {
      tnear = t1;
      axis = i;
    }
    tfar = std::min(tfar, t2);
  }
  if (tnear > tfar || tnear <= kRayEps || axis < 0) return false;
  tau = tnear;
  normal = {0.0, 0.0, 0.0};
  normal[axis] = d[axis] > 0.0 ? -1.0 : 1.0;
  return true;
}

bool hit_plane(const PrimitiveSpec& p, const Vec3& o, const Vec3& d,
               double& tau, Vec3& normal) {
  if (d[1] == 0.0) return false;
  const double t = (p.center[1] - o[1]) / d[1];
  if (t <= kRayEps) return false;
  tau = t;
  // face the ray came from
  normal = {0.0, d[1] > 0.0 ? -1.0 : 1.0, 0.0};
  return true;
}

bool camera_clear(const PrimitiveSpec& p, const Vec3& pos) {
  switch (p.kind) {
    case PrimitiveKind::kSphere:
      return norm3(sub3(pos, p.center)) > p.half_size[0] + kClearance;
    case PrimitiveKind::kBox:
      for (int i = 0; i < 3; ++i)
        if (std::abs(pos[i] - p.center[i]) > p.half_size[i] + kClearance)
          return true;
      return false;
    case PrimitiveKind::kGroundPlane:
      return std::abs(pos[1] - p.center[1]) > kClearance;
  }
  return true;
}

TextureSpec random_texture(Rng& rng) {
  TextureSpec tex;
  tex.kind = rng.uniform() < 0.5 ? TextureKind::kChecker : TextureKind::kValueNoise;
  tex.scale = rng.uniform(1.1, 2.4);
  for (int i = 0; i < 3; ++i) tex.offset[i] = rng.uniform(0.0, 8.0);
  for (int i = 0; i < 3; ++i) tex.color_a[i] = rng.uniform(0.55, 1.0);
  for (int i = 0; i < 3; ++i) tex.color_b[i] = rng.uniform(0.0, 0.45);
  tex.hash_seed = rng.next_u64();
  return tex;
}

}  // namespace

void SceneSpec::validate() const {
  if (width <= 0 || height <= 0) throw InvalidArgument("scene resolution must be positive");
  if (frames_per_scene < 1) throw InvalidArgument("frames_per_scene must be >= 1");
  if (primitives.empty()) throw InvalidArgument("scene needs at least one primitive");
  intrinsics.validate();
  for (const auto& p : primitives) {
    if (p.kind != PrimitiveKind::kGroundPlane &&
        (p.half_size[0] <= 0.0 || p.half_size[1] <= 0.0 || p.half_size[2] <= 0.0))
      throw InvalidArgument("primitive size must be positive");
    if (p.texture.scale <= 0.0) throw InvalidArgument("texture scale must be positive");
  }
}

bool raycast(const SceneSpec& spec, const Vec3& origin, const Vec3& dir,
             double& tau, Vec3& normal, int& prim_index) {
  double best = kFarClip;
  bool hit = false;
  for (size_t i = 0; i < spec.primitives.size(); ++i) {
    const auto& p = spec.primitives[i];
    double t;
    Vec3 n;
    bool h = false;
    switch (p.kind) {
      case PrimitiveKind::kSphere: h = hit_sphere(p, origin, dir, t, n); break;
      case PrimitiveKind::kBox: h = hit_box(p, origin, dir, t, n); break;
      case PrimitiveKind::kGroundPlane: h = hit_plane(p, origin, dir, t, n); break;
    }
    if (h && t < best) {
      best = t;
      normal = n;
      prim_index = static_cast<int>(i);
      hit = true;
    }
  }
  if (hit) tau = best;
  return hit;
}

SceneSpec random_scene_spec(const SceneGenConfig& cfg, uint64_t seed) {
  if (cfg.min_primitives < 1 || cfg.max_primitives < cfg.min_primitives)
    throw InvalidArgument("bad primitive count range");
  if (cfg.min_speed <= 0.0 || cfg.max_speed < cfg.min_speed)
    throw InvalidArgument("bad speed range");

  Rng rng(Rng::mix(seed, 0x5b07));
  SceneSpec spec;
  spec.seed = seed;
  spec.width = cfg.width;
  spec.height = cfg.height;
  spec.frames_per_scene = cfg.frames_per_scene;
  spec.intrinsics = Intrinsics::centered(cfg.width, cfg.height);

  // forward-dominant direction with lateral drift
  Vec3 dir = {rng.uniform(-0.12, 0.12), rng.uniform(-0.04, 0.04),
              rng.uniform(0.9, 1.1)};
  const double speed = rng.uniform(cfg.min_speed, cfg.max_speed);
  spec.velocity = scale3(dir, speed / norm3(dir));
  for (int i = 0; i < 3; ++i)
    spec.rotation_velocity[i] =
        rng.uniform(-cfg.max_rotation_speed, cfg.max_rotation_speed);

  std::vector<Vec3> path(spec.frames_per_scene);
  double max_y = 0.0, min_y = 0.0;
  for (int k = 0; k < spec.frames_per_scene; ++k) {
    path[k] = scale3(spec.velocity, static_cast<double>(k));
    max_y = std::max(max_y, path[k][1]);
    min_y = std::min(min_y, path[k][1]);
  }

  // floor and ceiling bracket the camera path (+y is down), so almost every
  // ray lands on finite depth instead of sky
  PrimitiveSpec ground;
  ground.kind = PrimitiveKind::kGroundPlane;
  ground.center = {0.0, max_y + rng.uniform(1.6, 2.4), 0.0};
  ground.texture = random_texture(rng);
  spec.primitives.push_back(ground);

  PrimitiveSpec ceiling;
  ceiling.kind = PrimitiveKind::kGroundPlane;
  ceiling.center = {0.0, min_y - rng.uniform(1.6, 2.4), 0.0};
  ceiling.texture = random_texture(rng);
  spec.primitives.push_back(ceiling);

  const int count = cfg.min_primitives +
                    static_cast<int>(rng.uniform_int(cfg.max_primitives - cfg.min_primitives + 1));
  for (int i = 0; i < count; ++i) {
    PrimitiveSpec p;
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      p.kind = rng.uniform() < 0.5 ? PrimitiveKind::kSphere : PrimitiveKind::kBox;
      p.center = {rng.uniform(-4.0, 4.0), rng.uniform(-3.0, 2.5),
                  rng.uniform(4.5, 26.0)};
      if (p.kind == PrimitiveKind::kSphere) {
        const double r = rng.uniform(0.5, 1.4);
        p.half_size = {r, r, r};
      } else {
        p.half_size = {rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2)};
      }
      placed = true;
      for (const auto& pos : path)
        if (!camera_clear(p, pos)) {
          placed = false;
          break;
        }
      if (placed && (p.center[1] + p.half_size[1] > ground.center[1] ||
                     p.center[1] - p.half_size[1] < ceiling.center[1]))
        placed = false;  // keep primitives between the two planes
    }
    if (!placed)
      throw Error("random_scene_spec: no clear placement after 1000 attempts");
    p.texture = random_texture(rng);
    spec.primitives.push_back(p);
  }
  return spec;
}

std::vector<RenderedFrame> generate_scene(const SceneSpec& spec) {
  spec.validate();
  for (const auto& p : spec.primitives)
    if (!camera_clear(p, {0.0, 0.0, 0.0}))
      throw InvalidArgument("camera starts inside a primitive");

  const int w = spec.width, h = spec.height;
  const Mat3 r_step = euler_to_matrix(spec.rotation_velocity);

  std::vector<RenderedFrame> frames(spec.frames_per_scene);
  Pose cam;  // camera-to-world, identity at frame 0
  for (int k = 0; k < spec.frames_per_scene; ++k) {
    RenderedFrame& f = frames[k];
    f.width = w;
    f.height = h;
    f.rgb.assign(static_cast<size_t>(3) * w * h, 0.0);
    f.depth.assign(static_cast<size_t>(w) * h, 0.0);
    f.cam_to_world = cam;

#pragma omp parallel for schedule(static)
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        const Vec3 dc = spec.intrinsics.unproject(u, v);
        const Vec3 dw = mat_apply(cam.R, dc);  // unnormalized: tau == z-depth
        double tau;
        Vec3 normal;
        int prim = -1;
        Vec3 color = kSkyColor;
        if (raycast(spec, cam.t, dw, tau, normal, prim)) {
          f.depth[static_cast<size_t>(v) * w + u] =
              static_cast<double>(static_cast<float>(tau));
          const Vec3 hp = add3(cam.t, scale3(dw, tau));
          const auto& p = spec.primitives[prim];
          const double fp = texel_footprint(tau, dw, normal,
                                            spec.intrinsics.fx, p.texture.scale);
          const Vec3 base = albedo(p.texture, hp, p.center, fp);
          const double shade =
              kAmbient + (1.0 - kAmbient) * std::max(0.0, dot3(normal, kLightDir));
          color = scale3(base, shade);
        } else {
          f.depth[static_cast<size_t>(v) * w + u] = kInf;
        }
        for (int c = 0; c < 3; ++c) {
          const double q = std::clamp(std::round(color[c] * 255.0), 0.0, 255.0);
          f.rgb[(static_cast<size_t>(c) * h + v) * w + u] = q / 255.0;
        }
      }
    }

    // constant per-frame motion: rotate about the camera's own axes, then
    // translate by the world velocity
    cam.R = mat_mul(cam.R, r_step);
    cam.t = add3(cam.t, spec.velocity);
  }
  return frames;
}

}  // namespace md
