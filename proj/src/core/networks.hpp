#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "core/diff_pose.hpp"
#include "core/geometry.hpp"
#include "core/tensor.hpp"

namespace md {

using ParamMap = std::map<std::string, Tensor>;  // sorted iteration order

int64_t param_count(const ParamMap& params);

struct DepthNetConfig {
  int base_channels = 8;
  int num_levels = 5;         // stride-2 encoder depth
  int num_output_scales = 4;  // depth heads, full resolution first
  void validate() const;
};

struct PoseNetConfig {
  int base_channels = 8;
  int num_frames = 5;  // N; output covers the N-1 non-last frames
  void validate() const;
};

// Two-frame depth network: VGG-like stride-2 encoder, nearest-up decoder
// with skip connections, per-scale prediction heads. Depth output is
// ELU(x) + 1 + 0.01, strictly positive, 1.01 at zero initialization.
struct DepthNet {
  DepthNetConfig cfg;
  ParamMap params;

  static DepthNet create(const DepthNetConfig& cfg, uint64_t seed);
  // Inputs [3,H,W] each, H and W divisible by 2^num_levels. Returns depth
  // maps [H/2^s, W/2^s] for s in [0, num_output_scales).
  std::vector<Tensor> forward(const Tensor& ref_stab, const Tensor& target) const;
};

// Per-sequence pose network: stride-2 encoder, 1x1 prediction convolution
// (zero-initialized), global average pooling, output scaled by 0.01. Raw
// output is 6 values per non-last frame, ordered (rx,ry,rz,tx,ty,tz),
// poses relative to the last frame.
struct PoseNet {
  PoseNetConfig cfg;
  ParamMap params;

  static PoseNet create(const PoseNetConfig& cfg, uint64_t seed);
  Tensor forward(const Tensor& frames) const;  // frames [3N,H,W] -> [6(N-1)]
};

// Differentiable poses from the flat network output; entry i transforms
// last-frame coordinates into frame-i coordinates. The list has N entries,
// the last being the identity.
std::vector<DiffPose> poses_from_output(const Tensor& flat, int num_frames);

// Depth and pose networks plus the bookkeeping a checkpoint carries.
struct Model {
  DepthNet depth;
  PoseNet pose;
  NominalDisplacement nd;
  int64_t iteration = 0;

  static Model create(const DepthNetConfig& dcfg, const PoseNetConfig& pcfg,
                      const NominalDisplacement& nd, uint64_t seed);
  void save(const std::string& path) const;
  static Model load(const std::string& path);
};

}  // namespace md
