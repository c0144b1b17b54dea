#pragma once

#include <optional>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/geometry.hpp"
#include "core/networks.hpp"
#include "core/tensor.hpp"

namespace md {

// How raw predictions are brought to metric scale before computing errors.
//   kGT: per-frame median(gt)/median(pred). Cancels any global factor, so
//        it cannot tell a scaled prediction from an unscaled one.
//   kP:  displacement / D0, using the measured camera displacement of the
//        evaluated pair. Sensitive to prediction scale.
//   kNone: predictions used as-is.
enum class ScaleMode { kGT, kP, kNone };

struct DepthCap {
  double min_depth = 1e-3;
  double max_depth = 100.0;
  void validate() const;  // 0 < min < max
};

struct MetricRecord {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double a1 = 0.0;  // fraction with max(p/g, g/p) < 1.25
  double a2 = 0.0;  // ... < 1.25^2
  double a3 = 0.0;  // ... < 1.25^3
  int64_t valid_pixels = 0;
};

struct FrameReport {
  std::string scene;
  int frame = 0;       // target frame index within the scene
  double scale = 1.0;  // factor applied to the raw prediction
  MetricRecord metrics;
};

struct EvalReport {
  ScaleMode mode = ScaleMode::kGT;
  bool flip_vertical = false;
  DepthCap cap;
  std::vector<FrameReport> frames;
  MetricRecord mean;  // per-frame metrics averaged
};

struct EvalOptions {
  ScaleMode mode = ScaleMode::kGT;
  bool flip_vertical = false;
  DepthCap cap;
  bool write_depth_maps = false;  // PFM + inverse-depth PPM per pair
  std::string out_dir;            // where depth maps go when enabled
};

// Standard depth-error suite over the masked pixels. The prediction is
// clamped to the cap before every term (logs included); gt must be positive
// on the mask. Throws InvalidArgument when the mask is empty.
MetricRecord eigen_metrics(const std::vector<double>& pred,
                           const std::vector<double>& gt,
                           const std::vector<uint8_t>& mask,
                           const DepthCap& cap);

// The GT-mode scale factor: median(gt)/median(pred) over the mask. Any
// global factor on pred cancels once this is applied.
double median_ratio_scale(const std::vector<double>& pred,
                          const std::vector<double>& gt,
                          const std::vector<uint8_t>& mask);

// Vertical mirror of a [C,H,W] buffer; applying it twice returns the
// original values exactly.
std::vector<double> flip_vertical_chw(const std::vector<double>& data,
                                      int channels, int h, int w);

// Depth for one (ref, target) pair in absolute units: stabilize ref by the
// rotation, run DepthNet, multiply by displacement/D0. When no rotation is
// given the PoseNet estimates it from the pair; rotation==identity skips
// the stabilization resample entirely.
Tensor infer_pair(const Tensor& ref, const Tensor& target,
                  const std::optional<Mat3>& rotation, double displacement,
                  const Model& model);

// One (ref=k-1, target=k) pair per scene, k the last frame: held-out (val)
// scenes when the split has any, otherwise every scene. Ground-truth
// rotation from metadata stabilizes the reference.
EvalReport evaluate(const Model& model, const std::string& dataset_root,
                    const EvalOptions& opt);
EvalReport evaluate_checkpoint(const std::string& ckpt_path,
                               const std::string& dataset_root,
                               const EvalOptions& opt);

// Same pairs and scaling, with the predictor replaced by depth 1.0
// everywhere. Needs no checkpoint.
EvalReport constant_plane_baseline(const std::string& dataset_root,
                                   const EvalOptions& opt);

// 8-bit heat map of clamped inverse depth, near = red, far = blue.
void write_inverse_depth_ppm(const std::string& path, int width, int height,
                             const std::vector<double>& depth,
                             const DepthCap& cap);

std::string report_to_json(const EvalReport& report);
std::string report_table(const EvalReport& report);

// report.json and report.txt under out_dir (created if missing).
void write_report(const EvalReport& report, const std::string& out_dir);

}  // namespace md
