#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/networks.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace md {

enum class SupervisionMode { kNone, kOrientation };

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double alpha = 0.075;
  double lambda = 3.0;
  double d0 = 1.0;
  double epsilon = 1e-5;
  int sequence_length = 5;  // N, also the PoseNet frame count
  int batch_size = 4;       // gradient accumulation before one Adam step
  int iterations = 2000;
  uint64_t seed = 0;
  SupervisionMode supervision = SupervisionMode::kNone;
  int checkpoint_every = 500;
  int eval_every = 500;
  DepthNetConfig depth;
  PoseNetConfig pose;  // num_frames is forced to sequence_length

  void validate() const;
};

// Reads a JSON object whose keys mirror the field names above ("depth" and
// "pose" are nested objects, "supervision" is "none" or "orientation").
// Unknown keys are errors.
TrainConfig train_config_from_json_file(const std::string& path);
TrainConfig train_config_from_json_text(const std::string& text,
                                        const std::string& origin);

struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  int64_t step = 0;
};

// Standard bias-corrected Adam over every parameter's accumulated gradient.
void adam_update(ParamMap& params, AdamState& state, const TrainConfig& cfg);

struct Subsequence {
  std::vector<Tensor> frames;  // N images [3,H,W]
  int t = 0;
  int r = 0;
  std::vector<Mat3> gt_rotations;  // R of T_{t->i}, from dataset poses
};

// Contiguous N-frame window at a uniform start, with uniform distinct
// (t, r). Throws InvalidArgument when the scene is shorter than N.
Subsequence sample_subsequence(const SceneData& scene, int n, Rng& rng);

// One sample pushed through the full workflow, with intermediates kept so
// tests and the step assertions can inspect them.
struct ForwardArtifacts {
  Tensor total;     // optimized objective (includes pose regularization)
  Tensor l_p;       // scale-weighted photometric sum
  Tensor l_g;       // scale-weighted smoothness sum, before lambda
  Tensor pose_out;  // raw PoseNet output
  std::vector<DiffPose> rel;         // poses rebased to the target frame
  std::vector<DiffPose> normalized;  // after translation normalization
  Tensor stabilized;                 // rotation-compensated reference frame
  std::vector<Tensor> zetas;
  double t_r_norm = 0.0;  // |t_r| after normalization, evaluated
};

ForwardArtifacts forward_losses(const Model& model, const Subsequence& sub,
                                const Intrinsics& k, const TrainConfig& cfg);

struct StepStats {
  double l_p = 0.0;
  double l_g = 0.0;
  double total = 0.0;  // batch means
};

// Accumulates gradients over the batch (each item weighted 1/B), then takes
// one Adam step. Throws Error naming the iteration and seed when the loss
// goes non-finite.
StepStats train_step(Model& model, AdamState& opt,
                     const std::vector<Subsequence>& batch, const Intrinsics& k,
                     const TrainConfig& cfg, int64_t iteration);

struct TrainResult {
  std::string checkpoint_path;
  std::string log_path;
  std::vector<std::array<double, 4>> log;  // iteration, L_p, L_g, total
};

// Full loop: loads the train split, then per iteration draws batch_size
// subsequences (per-iteration rng stream, so resuming cannot replay or skip
// samples), steps, and writes loss.csv plus periodic checkpoints.
TrainResult train(const std::string& dataset_root, const TrainConfig& cfg,
                  const std::string& out_dir,
                  const std::string& resume_checkpoint = "");

}  // namespace md
