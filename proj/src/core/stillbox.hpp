#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "core/geometry.hpp"

namespace md {

enum class PrimitiveKind { kSphere, kBox, kGroundPlane };
enum class TextureKind { kChecker, kValueNoise };

struct TextureSpec {
  TextureKind kind = TextureKind::kChecker;
  double scale = 1.0;  // feature size in world units
  Vec3 offset = {0.0, 0.0, 0.0};
  Vec3 color_a = {0.9, 0.9, 0.9};
  Vec3 color_b = {0.1, 0.1, 0.1};
  uint64_t hash_seed = 0;  // value-noise lattice stream
};

struct PrimitiveSpec {
  PrimitiveKind kind = PrimitiveKind::kSphere;
  Vec3 center = {0.0, 0.0, 0.0};  // ground plane uses center[1] as its height
  Vec3 half_size = {1.0, 1.0, 1.0};  // sphere radius = half_size[0]
  TextureSpec texture;
};

// Fully determined scene: primitives plus a constant-velocity camera.
// World frame = frame-0 camera frame.
struct SceneSpec {
  uint64_t seed = 0;
  int width = 64;
  int height = 64;
  int frames_per_scene = 20;
  Intrinsics intrinsics;
  std::vector<PrimitiveSpec> primitives;
  Vec3 velocity = {0.0, 0.0, 0.0};           // world units per frame
  Vec3 rotation_velocity = {0.0, 0.0, 0.0};  // Euler rates, rad per frame
  void validate() const;
};

struct RenderedFrame {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;    // [3,H,W] in [0,1], snapped to the 8-bit grid
  std::vector<double> depth;  // [H,W] camera z-depth, +inf sky
  Pose cam_to_world;
};

// Ranges for drawing random scenes.
struct SceneGenConfig {
  int width = 64;
  int height = 64;
  int frames_per_scene = 20;
  int min_primitives = 4;
  int max_primitives = 7;
  double min_speed = 1.0;            // units per frame
  double max_speed = 1.3;
  double max_rotation_speed = 0.01;  // rad per frame, per axis, uniform
};

constexpr double kFarClip = 100.0;  // hits beyond this count as sky
constexpr double kInf = std::numeric_limits<double>::infinity();

// Rejection-samples primitive placements so every camera position along the
// path stays clear. Throws Error after 1000 failed attempts for a primitive.
SceneSpec random_scene_spec(const SceneGenConfig& cfg, uint64_t seed);

// Raycasts every frame. Depth is exact analytic z-depth (stored through
// float32), rgb is quantized to the 8-bit grid so in-memory frames equal
// their on-disk round trip bit for bit.
std::vector<RenderedFrame> generate_scene(const SceneSpec& spec);

// Exposed for tests: nearest-hit query along o + tau*d, tau in (eps, far).
// Returns false for sky. Normal is the outward surface normal at the hit.
bool raycast(const SceneSpec& spec, const Vec3& origin, const Vec3& dir,
             double& tau, Vec3& normal, int& prim_index);

}  // namespace md
