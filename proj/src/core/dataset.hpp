#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/geometry.hpp"
#include "core/stillbox.hpp"
#include "core/tensor.hpp"

namespace md {

// On-disk layout:
//   root/scene_NNNN/frame_KK.ppm   P6, 8-bit
//   root/scene_NNNN/frame_KK.pfm   grayscale PFM, scale -1.0, +inf depth
//                                  stored as the 1e9 sentinel
//   root/scene_NNNN/metadata.json  intrinsics, per-frame poses, velocities
//   root/index.json                scene list and train/val split

struct FrameData {
  int width = 0;
  int height = 0;
  Tensor rgb;                 // [3,H,W] in [0,1]
  std::vector<double> depth;  // [H,W], +inf for sky
  Pose cam_to_world;
};

struct SceneData {
  Intrinsics intrinsics;
  Vec3 velocity = {0.0, 0.0, 0.0};
  Vec3 rotation_velocity = {0.0, 0.0, 0.0};
  uint64_t seed = 0;
  std::vector<FrameData> frames;
};

struct GeneratedScene {
  SceneSpec spec;
  std::vector<RenderedFrame> frames;
};

struct DatasetIndex {
  std::vector<std::string> scenes;  // directory names under root
  std::vector<std::string> train;
  std::vector<std::string> val;
};

void write_ppm(const std::string& path, int width, int height,
               const std::vector<double>& rgb_chw);
void read_ppm(const std::string& path, int& width, int& height,
              std::vector<double>& rgb_chw);
void write_pfm(const std::string& path, int width, int height,
               const std::vector<double>& depth);
void read_pfm(const std::string& path, int& width, int& height,
              std::vector<double>& depth);

void write_scene(const std::string& scene_dir, const SceneSpec& spec,
                 const std::vector<RenderedFrame>& frames);
SceneData load_scene(const std::string& scene_dir);

void write_index(const std::string& root, const DatasetIndex& index);
DatasetIndex load_index(const std::string& root);

// Validation tail split: the last quarter of scenes (at least one, never all).
DatasetIndex make_split(int num_scenes);

void write_dataset(const std::vector<GeneratedScene>& scenes,
                   const std::string& root);

// Draws, renders, and writes num_scenes scenes (parallel across scenes, each
// deterministic from mix(seed, index)), then writes the index.
DatasetIndex generate_dataset(const std::string& root, const SceneGenConfig& cfg,
                              int num_scenes, uint64_t seed);

}  // namespace md
