#include "core/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>

#include <nlohmann/json.hpp>

#include "core/error.hpp"
#include "core/warp.hpp"

namespace md {

namespace {

double median_of(std::vector<double> v) {
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 0) {
    std::nth_element(v.begin(), v.begin() + mid - 1, v.begin() + mid);
    return 0.5 * (v[mid - 1] + hi);
  }
  return hi;
}

bool is_identity(const Mat3& r) {
  const Mat3 id = mat_identity();
  for (int i = 0; i < 9; ++i)
    if (r[i] != id[i]) return false;
  return true;
}

// rotation seen by a vertically mirrored camera: conjugation by diag(1,-1,1)
Mat3 flip_conjugate(const Mat3& r) {
  Mat3 out = r;
  out[1] = -out[1];
  out[3] = -out[3];
  out[5] = -out[5];
  out[7] = -out[7];
  return out;
}

struct PairInput {
  Tensor ref;
  Tensor target;
  Mat3 rotation;  // ref <- target
  double displacement = 0.0;
  std::vector<double> gt;  // target z-depth, +inf sky
  int width = 0;
  int height = 0;
  Intrinsics k;
};

// the held-out pair of one scene: (k-1, k) with k the last frame
PairInput last_pair(const SceneData& scene, bool flip) {
  const int t = static_cast<int>(scene.frames.size()) - 1;
  if (t < 1) throw InvalidArgument("scene has fewer than two frames");
  const FrameData& fr = scene.frames[t - 1];
  const FrameData& ft = scene.frames[t];
  PairInput pair;
  pair.width = ft.width;
  pair.height = ft.height;
  pair.k = scene.intrinsics;
  pair.rotation =
      compose(inverse(fr.cam_to_world), ft.cam_to_world).R;
  const Vec3 d = sub3(ft.cam_to_world.t, fr.cam_to_world.t);
  pair.displacement = norm3(d);
  if (!flip) {
    pair.ref = fr.rgb;
    pair.target = ft.rgb;
    pair.gt = ft.depth;
  } else {
    pair.ref = Tensor::from_data(
        {3, ft.height, ft.width},
        flip_vertical_chw(fr.rgb.value(), 3, ft.height, ft.width));
    pair.target = Tensor::from_data(
        {3, ft.height, ft.width},
        flip_vertical_chw(ft.rgb.value(), 3, ft.height, ft.width));
    pair.gt = flip_vertical_chw(ft.depth, 1, ft.height, ft.width);
    pair.rotation = flip_conjugate(pair.rotation);
  }
  return pair;
}

std::vector<double> model_zeta(const Model& model, const PairInput& pair) {
  Tensor stab = is_identity(pair.rotation)
                    ? pair.ref
                    : stabilize(pair.ref, pair.rotation, pair.k).image;
  Tensor zeta = model.depth.forward(stab, pair.target)[0];
  return zeta.value();
}

struct Prediction {
  std::vector<double> raw;
  double d0 = 1.0;
};

FrameReport score_pair(const PairInput& pair, const Prediction& pred,
                       const EvalOptions& opt, const std::string& scene_name,
                       int frame_index) {
  std::vector<uint8_t> mask(pair.gt.size(), 0);
  size_t valid = 0;
  for (size_t i = 0; i < pair.gt.size(); ++i)
    if (std::isfinite(pair.gt[i]) && pair.gt[i] > 0.0) {
      mask[i] = 1;
      ++valid;
    }
  if (valid == 0)
    throw InvalidArgument("evaluation mask is empty for scene " + scene_name);

  double scale = 1.0;
  switch (opt.mode) {
    case ScaleMode::kGT:
      scale = median_ratio_scale(pred.raw, pair.gt, mask);
      break;
    case ScaleMode::kP:
      if (pair.displacement <= 0.0)
        throw Error("P-mode scaling needs a nonzero displacement (scene " +
                    scene_name + ")");
      scale = pair.displacement / pred.d0;
      break;
    case ScaleMode::kNone:
      break;
  }

  std::vector<double> scaled(pred.raw.size());
  for (size_t i = 0; i < scaled.size(); ++i) scaled[i] = pred.raw[i] * scale;

  FrameReport fr;
  fr.scene = scene_name;
  fr.frame = frame_index;
  fr.scale = scale;
  fr.metrics = eigen_metrics(scaled, pair.gt, mask, opt.cap);

  if (opt.write_depth_maps && !opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    char stem[64];
    std::snprintf(stem, sizeof stem, "depth_%s_f%02d", scene_name.c_str(),
                  frame_index);
    write_pfm(opt.out_dir + "/" + stem + ".pfm", pair.width, pair.height,
              scaled);
    write_inverse_depth_ppm(opt.out_dir + "/" + stem + ".ppm", pair.width,
                            pair.height, scaled, opt.cap);
  }
  return fr;
}

MetricRecord fold_mean(const std::vector<FrameReport>& frames) {
  MetricRecord mean;
  if (frames.empty()) return mean;
  for (const auto& fr : frames) {
    mean.abs_rel += fr.metrics.abs_rel;
    mean.sq_rel += fr.metrics.sq_rel;
    mean.rmse += fr.metrics.rmse;
    mean.rmse_log += fr.metrics.rmse_log;
    mean.a1 += fr.metrics.a1;
    mean.a2 += fr.metrics.a2;
    mean.a3 += fr.metrics.a3;
    mean.valid_pixels += fr.metrics.valid_pixels;  // total, not average
  }
  const double n = static_cast<double>(frames.size());
  mean.abs_rel /= n;
  mean.sq_rel /= n;
  mean.rmse /= n;
  mean.rmse_log /= n;
  mean.a1 /= n;
  mean.a2 /= n;
  mean.a3 /= n;
  return mean;
}

std::vector<std::string> eval_scenes(const DatasetIndex& index) {
  return index.val.empty() ? index.scenes : index.val;
}

using Predictor =
    std::function<Prediction(const SceneData& scene, const PairInput& pair)>;

EvalReport run_eval(const std::string& dataset_root, const EvalOptions& opt,
                    const Predictor& predict) {
  opt.cap.validate();
  const DatasetIndex index = load_index(dataset_root);
  const std::vector<std::string> names = eval_scenes(index);
  if (names.empty()) throw InvalidArgument("dataset has no scenes to evaluate");

  EvalReport report;
  report.mode = opt.mode;
  report.flip_vertical = opt.flip_vertical;
  report.cap = opt.cap;
  report.frames.resize(names.size());

  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < static_cast<int64_t>(names.size()); ++i) {
    try {
      const SceneData scene = load_scene(dataset_root + "/" + names[i]);
      const PairInput pair = last_pair(scene, opt.flip_vertical);
      const Prediction pred = predict(scene, pair);
      report.frames[i] =
          score_pair(pair, pred, opt, names[i],
                     static_cast<int>(scene.frames.size()) - 1);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  report.mean = fold_mean(report.frames);
  return report;
}

const char* mode_name(ScaleMode mode) {
  switch (mode) {
    case ScaleMode::kGT: return "gt";
    case ScaleMode::kP: return "p";
    case ScaleMode::kNone: return "none";
  }
  return "?";
}

}  // namespace

void DepthCap::validate() const {
  if (!(min_depth > 0.0) || !(max_depth > min_depth))
    throw InvalidArgument("depth cap needs 0 < min < max");
}

MetricRecord eigen_metrics(const std::vector<double>& pred,
                           const std::vector<double>& gt,
                           const std::vector<uint8_t>& mask,
                           const DepthCap& cap) {
  cap.validate();
  if (pred.size() != gt.size() || pred.size() != mask.size())
    throw InvalidArgument("eigen_metrics: size mismatch");
  MetricRecord m;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const double g = gt[i];
    if (!(g > 0.0) || !std::isfinite(g))
      throw InvalidArgument("eigen_metrics: ground truth must be positive on the mask");
    const double p = std::clamp(pred[i], cap.min_depth, cap.max_depth);
    const double d = p - g;
    m.abs_rel += std::abs(d) / g;
    m.sq_rel += d * d / g;
    m.rmse += d * d;
    const double dl = std::log(p) - std::log(g);
    m.rmse_log += dl * dl;
    const double ratio = std::max(p / g, g / p);
    m.a1 += ratio < 1.25 ? 1.0 : 0.0;
    m.a2 += ratio < 1.25 * 1.25 ? 1.0 : 0.0;
    m.a3 += ratio < 1.25 * 1.25 * 1.25 ? 1.0 : 0.0;
    m.valid_pixels += 1;
  }
  if (m.valid_pixels == 0) throw InvalidArgument("eigen_metrics: empty mask");
  const double n = static_cast<double>(m.valid_pixels);
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(m.rmse / n);
  m.rmse_log = std::sqrt(m.rmse_log / n);
  m.a1 /= n;
  m.a2 /= n;
  m.a3 /= n;
  return m;
}

double median_ratio_scale(const std::vector<double>& pred,
                          const std::vector<double>& gt,
                          const std::vector<uint8_t>& mask) {
  std::vector<double> mp, mg;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      mp.push_back(pred[i]);
      mg.push_back(gt[i]);
    }
  if (mp.empty()) throw InvalidArgument("median_ratio_scale: empty mask");
  return median_of(std::move(mg)) / median_of(std::move(mp));
}

std::vector<double> flip_vertical_chw(const std::vector<double>& data,
                                      int channels, int h, int w) {
  if (static_cast<size_t>(channels) * h * w != data.size())
    throw InvalidArgument("flip_vertical_chw: size mismatch");
  std::vector<double> out(data.size());
  for (int c = 0; c < channels; ++c)
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u)
        out[(static_cast<size_t>(c) * h + v) * w + u] =
            data[(static_cast<size_t>(c) * h + (h - 1 - v)) * w + u];
  return out;
}

Tensor infer_pair(const Tensor& ref, const Tensor& target,
                  const std::optional<Mat3>& rotation, double displacement,
                  const Model& model) {
  if (!(displacement > 0.0))
    throw InvalidArgument("infer_pair: displacement must be positive");
  const auto& shape = target.shape();
  if (shape.size() != 3 || shape[0] != 3)
    throw InvalidArgument("infer_pair: images must be [3,H,W]");
  const int h = static_cast<int>(shape[1]);
  const int w = static_cast<int>(shape[2]);
  Intrinsics k = Intrinsics::centered(w, h);

  Mat3 r;
  if (rotation) {
    r = *rotation;
  } else {
    // PoseNet estimate: the pair fills an N-frame stack, target last
    const int n = model.pose.cfg.num_frames;
    if (n < 2) throw InvalidArgument("pose network cannot take a pair");
    Tensor stacked = ref;
    for (int i = 1; i + 1 < n; ++i) stacked = concat0(stacked, ref);
    stacked = concat0(stacked, target);
    auto poses = poses_from_output(model.pose.forward(stacked), n);
    const Pose p0 = poses[0].eval();
    r = p0.R;
  }

  Tensor stab = is_identity(r) ? ref : stabilize(ref, r, k).image;
  Tensor zeta = model.depth.forward(stab, target)[0];
  return mul(zeta, Tensor::scalar(displacement / model.nd.d0));
}

EvalReport evaluate(const Model& model, const std::string& dataset_root,
                    const EvalOptions& opt) {
  Predictor predict = [&model](const SceneData&, const PairInput& pair) {
    Prediction p;
    p.raw = model_zeta(model, pair);
    p.d0 = model.nd.d0;
    return p;
  };
  return run_eval(dataset_root, opt, predict);
}

EvalReport evaluate_checkpoint(const std::string& ckpt_path,
                               const std::string& dataset_root,
                               const EvalOptions& opt) {
  const Model model = Model::load(ckpt_path);
  return evaluate(model, dataset_root, opt);
}

EvalReport constant_plane_baseline(const std::string& dataset_root,
                                   const EvalOptions& opt) {
  Predictor predict = [](const SceneData&, const PairInput& pair) {
    Prediction p;
    p.raw.assign(static_cast<size_t>(pair.width) * pair.height, 1.0);
    p.d0 = 1.0;
    return p;
  };
  return run_eval(dataset_root, opt, predict);
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["scale_mode"] = mode_name(report.mode);
  j["flip_vertical"] = report.flip_vertical;
  j["cap"] = {{"min_depth", report.cap.min_depth},
              {"max_depth", report.cap.max_depth}};
  auto rec = [](const MetricRecord& m) {
    return nlohmann::json{{"abs_rel", m.abs_rel},   {"sq_rel", m.sq_rel},
                          {"rmse", m.rmse},         {"rmse_log", m.rmse_log},
                          {"a1", m.a1},             {"a2", m.a2},
                          {"a3", m.a3},             {"valid_pixels", m.valid_pixels}};
  };
  j["frames"] = nlohmann::json::array();
  for (const auto& fr : report.frames) {
    nlohmann::json f = rec(fr.metrics);
    f["scene"] = fr.scene;
    f["frame"] = fr.frame;
    f["scale"] = fr.scale;
    j["frames"].push_back(std::move(f));
  }
  j["mean"] = rec(report.mean);
  return j.dump(2) + "\n";
}

std::string report_table(const EvalReport& report) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-12s %6s %9s %9s %9s %9s %9s %8s %8s %8s\n",
                "scene", "frame", "abs_rel", "sq_rel", "rmse", "rmse_log",
                "d<1.25", "d<1.25^2", "d<1.25^3", "valid");
  out += line;
  auto row = [&](const std::string& name, int frame, const MetricRecord& m) {
    char frame_s[16];
    if (frame >= 0)
      std::snprintf(frame_s, sizeof frame_s, "%d", frame);
    else
      std::snprintf(frame_s, sizeof frame_s, "-");
    std::snprintf(line, sizeof line,
                  "%-12s %6s %9.4f %9.4f %9.4f %9.4f %9.4f %8.4f %8.4f %8lld\n",
                  name.c_str(), frame_s, m.abs_rel, m.sq_rel, m.rmse,
                  m.rmse_log, m.a1, m.a2, m.a3,
                  static_cast<long long>(m.valid_pixels));
    out += line;
  };
  for (const auto& fr : report.frames) row(fr.scene, fr.frame, fr.metrics);
  row("mean", -1, report.mean);
  return out;
}

void write_report(const EvalReport& report, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream js(out_dir + "/report.json", std::ios::binary);
  js << report_to_json(report);
  std::ofstream txt(out_dir + "/report.txt", std::ios::binary);
  txt << report_table(report);
  if (!js || !txt) throw IoError("failed writing report files to " + out_dir);
}

}  // namespace md
