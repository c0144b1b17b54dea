#include "core/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <utility>

#include "core/error.hpp"
#include "core/losses.hpp"
#include "core/warp.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace md {

namespace {

constexpr double kPoseL2 = 1e-4;       // weight of the pose output penalty
constexpr double kIdentityTol = 1e-9;  // rebased target-to-target pose

void check_finite_positive(double v, const char* name) {
  if (!(std::isfinite(v) && v > 0.0))
    throw InvalidArgument(std::string("TrainConfig: ") + name +
                          " must be finite and positive");
}

}  // namespace

void TrainConfig::validate() const {
  check_finite_positive(lr, "lr");
  check_finite_positive(epsilon, "epsilon");
  check_finite_positive(d0, "d0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw InvalidArgument("TrainConfig: betas must lie in [0,1)");
  if (alpha < 0.0 || lambda < 0.0)
    throw InvalidArgument("TrainConfig: loss weights must be >= 0");
  if (sequence_length < 2)
    throw InvalidArgument("TrainConfig: sequence_length must be >= 2");
  if (batch_size < 1) throw InvalidArgument("TrainConfig: batch_size must be >= 1");
  if (iterations < 1) throw InvalidArgument("TrainConfig: iterations must be >= 1");
  if (checkpoint_every < 1 || eval_every < 0)
    throw InvalidArgument("TrainConfig: bad cadence");
  depth.validate();
}

TrainConfig train_config_from_json_text(const std::string& text,
                                        const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(origin + ": " + e.what());
  }
  if (!j.is_object()) throw IoError(origin + ": config root must be an object");

  TrainConfig cfg;
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "lr") cfg.lr = val.get<double>();
      else if (key == "beta1") cfg.beta1 = val.get<double>();
      else if (key == "beta2") cfg.beta2 = val.get<double>();
      else if (key == "adam_eps") cfg.adam_eps = val.get<double>();
      else if (key == "alpha") cfg.alpha = val.get<double>();
      else if (key == "lambda") cfg.lambda = val.get<double>();
      else if (key == "d0") cfg.d0 = val.get<double>();
      else if (key == "epsilon") cfg.epsilon = val.get<double>();
      else if (key == "sequence_length") cfg.sequence_length = val.get<int>();
      else if (key == "batch_size") cfg.batch_size = val.get<int>();
      else if (key == "iterations") cfg.iterations = val.get<int>();
      else if (key == "seed") cfg.seed = val.get<uint64_t>();
      else if (key == "checkpoint_every") cfg.checkpoint_every = val.get<int>();
      else if (key == "eval_every") cfg.eval_every = val.get<int>();
      else if (key == "supervision") {
        const std::string s = val.get<std::string>();
        if (s == "none") cfg.supervision = SupervisionMode::kNone;
        else if (s == "orientation") cfg.supervision = SupervisionMode::kOrientation;
        else throw IoError(origin + ": supervision must be 'none' or 'orientation'");
      } else if (key == "depth") {
        for (const auto& [dk, dv] : val.items()) {
          if (dk == "base_channels") cfg.depth.base_channels = dv.get<int>();
          else if (dk == "num_levels") cfg.depth.num_levels = dv.get<int>();
          else if (dk == "num_output_scales") cfg.depth.num_output_scales = dv.get<int>();
          else throw IoError(origin + ": unknown key depth." + dk);
        }
      } else if (key == "pose") {
        for (const auto& [pk, pv] : val.items()) {
          if (pk == "base_channels") cfg.pose.base_channels = pv.get<int>();
          else throw IoError(origin + ": unknown key pose." + pk);
        }
      } else {
        throw IoError(origin + ": unknown key " + key);
      }
    }
  } catch (const json::exception& e) {
    throw IoError(origin + ": " + e.what());
  }
  cfg.pose.num_frames = cfg.sequence_length;
  return cfg;
}

TrainConfig train_config_from_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return train_config_from_json_text(text, path);
}

void adam_update(ParamMap& params, AdamState& state, const TrainConfig& cfg) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    auto& val = p.mutable_value();
    const auto& g = p.grad();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != val.size()) m.assign(val.size(), 0.0);
    if (v.size() != val.size()) v.assign(val.size(), 0.0);
    for (size_t i = 0; i < val.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      val[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
    }
  }
}

Subsequence sample_subsequence(const SceneData& scene, int n, Rng& rng) {
  const int len = static_cast<int>(scene.frames.size());
  if (n < 2) throw InvalidArgument("sample_subsequence: N must be >= 2");
  if (len < n)
    throw InvalidArgument("sample_subsequence: scene has " +
                          std::to_string(len) + " frames, need " +
                          std::to_string(n));
  const int start = static_cast<int>(rng.uniform_int(len - n + 1));
  const int t = static_cast<int>(rng.uniform_int(n));
  int r = static_cast<int>(rng.uniform_int(n - 1));
  if (r >= t) ++r;

  Subsequence sub;
  sub.t = t;
  sub.r = r;
  const Pose& target_pose = scene.frames[start + t].cam_to_world;
  for (int i = 0; i < n; ++i) {
    sub.frames.push_back(scene.frames[start + i].rgb);
    sub.gt_rotations.push_back(
        compose(inverse(scene.frames[start + i].cam_to_world), target_pose).R);
  }
  return sub;
}

ForwardArtifacts forward_losses(const Model& model, const Subsequence& sub,
                                const Intrinsics& k, const TrainConfig& cfg) {
  const int n = static_cast<int>(sub.frames.size());
  if (n != cfg.sequence_length)
    throw InvalidArgument("forward_losses: frame count differs from N");
  if (sub.t < 0 || sub.t >= n || sub.r < 0 || sub.r >= n || sub.t == sub.r)
    throw InvalidArgument("forward_losses: bad t/r indices");

  ForwardArtifacts art;

  Tensor stacked = sub.frames[0];
  for (int i = 1; i < n; ++i) stacked = concat0(stacked, sub.frames[i]);
  art.pose_out = model.pose.forward(stacked);
  auto poses = poses_from_output(art.pose_out, n);  // relative to last frame

  // rebase so every pose maps target-frame points to frame i
  const DiffPose inv_t = inverse(poses[sub.t]);
  for (int i = 0; i < n; ++i) art.rel.push_back(compose(poses[i], inv_t));

  {
    const Pose self = art.rel[sub.t].eval();
    const Mat3 id = mat_identity();
    for (int i = 0; i < 9; ++i)
      if (std::abs(self.R[i] - id[i]) > kIdentityTol)
        throw Error("pose compensation: target-to-target rotation is not identity");
    for (int i = 0; i < 3; ++i)
      if (std::abs(self.t[i]) > kIdentityTol)
        throw Error("pose compensation: target-to-target translation is not zero");
  }

  if (cfg.supervision == SupervisionMode::kOrientation) {
    if (static_cast<int>(sub.gt_rotations.size()) != n)
      throw InvalidArgument("orientation supervision needs ground-truth rotations");
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 9; ++j)
        art.rel[i].R[j] = Tensor::scalar(sub.gt_rotations[i][j]);
  }

  // rotation-only compensation of the reference frame; the rotation enters
  // as plain numbers (bit-equal to ground truth in orientation mode)
  Mat3 r_r;
  for (int j = 0; j < 9; ++j) r_r[j] = art.rel[sub.r].R[j].item();
  art.stabilized = stabilize(sub.frames[sub.r], r_r, k).image;

  art.zetas = model.depth.forward(art.stabilized, sub.frames[sub.t]);

  art.normalized =
      normalize_translations(art.rel, sub.r, {cfg.d0, cfg.epsilon});
  {
    const Pose ref = art.normalized[sub.r].eval();
    art.t_r_norm = norm3(ref.t);
    const double raw = norm3(art.rel[sub.r].eval().t);
    if (raw >= 1e3 * cfg.epsilon &&
        (art.t_r_norm > cfg.d0 * (1.0 + 1e-12) ||
         art.t_r_norm < cfg.d0 * (1.0 - 1e-3)))
      throw Error("translation normalization left |t_r| outside its band");
  }

  const int num_scales = model.depth.cfg.num_output_scales;
  const auto target_pyr = image_pyramid(sub.frames[sub.t], num_scales);
  std::vector<std::vector<Tensor>> src_pyr(n);
  for (int i = 0; i < n; ++i)
    if (i != sub.t) src_pyr[i] = image_pyramid(sub.frames[i], num_scales);

  std::vector<std::pair<Tensor, Tensor>> per_scale;
  Tensor lp_sum = Tensor::scalar(0.0);
  Tensor lg_sum = Tensor::scalar(0.0);
  for (int s = 0; s < num_scales; ++s) {
    const Intrinsics ks = at_scale(k, s);
    std::vector<WarpResult> warped;
    for (int i = 0; i < n; ++i)
      if (i != sub.t)
        warped.push_back(
            inverse_warp(src_pyr[i][s], art.zetas[s], art.normalized[i], ks));
    Tensor lp = photometric_loss(warped, target_pyr[s], cfg.alpha);
    Tensor lg = smooth_loss(art.zetas[s], target_pyr[s]);
    per_scale.emplace_back(lp, lg);
    const double w = std::pow(0.5, s);
    lp_sum = add(lp_sum, mul(lp, Tensor::scalar(w)));
    lg_sum = add(lg_sum, mul(lg, Tensor::scalar(w)));
  }
  LossWeights weights;
  weights.alpha = cfg.alpha;
  weights.lambda = cfg.lambda;
  weights.num_scales = num_scales;
  Tensor total = total_loss(per_scale, weights);

  const Tensor reg =
      mul(sum(mul(art.pose_out, art.pose_out)), Tensor::scalar(kPoseL2));
  art.total = add(total, reg);
  art.l_p = lp_sum;
  art.l_g = lg_sum;
  return art;
}

StepStats train_step(Model& model, AdamState& opt,
                     const std::vector<Subsequence>& batch, const Intrinsics& k,
                     const TrainConfig& cfg, int64_t iteration) {
  if (batch.empty()) throw InvalidArgument("train_step: empty batch");

  for (auto& [name, p] : model.depth.params) p.zero_grad();
  for (auto& [name, p] : model.pose.params) p.zero_grad();

  StepStats stats;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const auto& sub : batch) {
    auto art = forward_losses(model, sub, k, cfg);
    const double tv = art.total.item();
    if (!std::isfinite(tv))
      throw Error("non-finite loss at iteration " + std::to_string(iteration) +
                  " (seed " + std::to_string(cfg.seed) + ")");
    stats.l_p += art.l_p.item() * inv_b;
    stats.l_g += art.l_g.item() * inv_b;
    stats.total += tv * inv_b;
    backward(mul(art.total, Tensor::scalar(inv_b)));
  }

  ParamMap all;
  for (auto& [name, p] : model.depth.params) all["depth/" + name] = p;
  for (auto& [name, p] : model.pose.params) all["pose/" + name] = p;
  adam_update(all, opt, cfg);
  return stats;
}

namespace {

std::vector<SceneData> load_split(const std::string& root,
                                  const std::vector<std::string>& names,
                                  const TrainConfig& cfg, const char* split) {
  std::vector<SceneData> scenes;
  for (const auto& name : names) {
    SceneData s = load_scene(root + "/" + name);
    if (static_cast<int>(s.frames.size()) < cfg.sequence_length) {
      std::fprintf(stderr,
                   "warning: %s scene %s has %zu frames, need %d; skipped\n",
                   split, name.c_str(), s.frames.size(), cfg.sequence_length);
      continue;
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

void check_resolution(const SceneData& s, const TrainConfig& cfg) {
  const int div = 1 << cfg.depth.num_levels;
  const int w = s.frames[0].width, h = s.frames[0].height;
  if (w % div != 0 || h % div != 0)
    throw InvalidArgument("training resolution " + std::to_string(w) + "x" +
                          std::to_string(h) + " is not divisible by " +
                          std::to_string(div));
}

}  // namespace

TrainResult train(const std::string& dataset_root, const TrainConfig& cfg_in,
                  const std::string& out_dir,
                  const std::string& resume_checkpoint) {
  TrainConfig cfg = cfg_in;
  cfg.pose.num_frames = cfg.sequence_length;
  cfg.validate();

  const DatasetIndex index = load_index(dataset_root);
  if (index.train.empty())
    throw InvalidArgument(dataset_root + ": dataset has no training scenes");
  auto train_scenes = load_split(dataset_root, index.train, cfg, "train");
  if (train_scenes.empty())
    throw InvalidArgument(dataset_root + ": no training scene is long enough");
  auto val_scenes = load_split(dataset_root, index.val, cfg, "val");
  check_resolution(train_scenes[0], cfg);
  const Intrinsics k = train_scenes[0].intrinsics;

  Model model =
      resume_checkpoint.empty()
          ? Model::create(cfg.depth, cfg.pose, {cfg.d0, cfg.epsilon},
                          Rng::mix(cfg.seed, 1000))
          : Model::load(resume_checkpoint);
  if (model.pose.cfg.num_frames != cfg.sequence_length)
    throw InvalidArgument("checkpoint sequence length differs from config");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir + ": cannot create directory: " + ec.message());

  TrainResult res;
  res.checkpoint_path = out_dir + "/checkpoint.bin";
  res.log_path = out_dir + "/loss.csv";

  const bool fresh = resume_checkpoint.empty() || model.iteration == 0;
  std::ofstream csv(res.log_path,
                    fresh ? std::ios::trunc : std::ios::app);
  if (!csv) throw IoError(res.log_path + ": cannot open for writing");
  csv << std::setprecision(17);
  if (fresh) csv << "iteration,L_p,L_g,total\n";

  std::ofstream val_csv;
  if (cfg.eval_every > 0 && !val_scenes.empty()) {
    val_csv.open(out_dir + "/val.csv", fresh ? std::ios::trunc : std::ios::app);
    if (!val_csv) throw IoError(out_dir + "/val.csv: cannot open for writing");
    val_csv << std::setprecision(17);
    if (fresh) val_csv << "iteration,L_p,L_g,total\n";
  }

  AdamState opt;  // moments restart on resume; only params persist
  for (int64_t it = model.iteration; it < cfg.iterations; ++it) {
    // per-iteration stream: resuming at iteration i replays the same draws
    Rng rng(Rng::mix(cfg.seed, 0x7721 + static_cast<uint64_t>(it)));
    std::vector<Subsequence> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& scene =
          train_scenes[rng.uniform_int(static_cast<int64_t>(train_scenes.size()))];
      batch.push_back(sample_subsequence(scene, cfg.sequence_length, rng));
    }
    const StepStats stats = train_step(model, opt, batch, k, cfg, it);
    model.iteration = it + 1;

    csv << it << "," << stats.l_p << "," << stats.l_g << "," << stats.total
        << "\n";
    csv.flush();
    res.log.push_back({static_cast<double>(it), stats.l_p, stats.l_g,
                       stats.total});

    const bool last = it + 1 == cfg.iterations;
    if ((it + 1) % cfg.checkpoint_every == 0 || last) model.save(res.checkpoint_path);

    if (val_csv.is_open() && ((it + 1) % cfg.eval_every == 0 || last)) {
      Rng vrng(Rng::mix(cfg.seed, 0xEE00 + static_cast<uint64_t>(it)));
      double lp = 0.0, lg = 0.0, total = 0.0;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const auto& scene =
            val_scenes[vrng.uniform_int(static_cast<int64_t>(val_scenes.size()))];
        auto art = forward_losses(
            model, sample_subsequence(scene, cfg.sequence_length, vrng), k, cfg);
        lp += art.l_p.item() / cfg.batch_size;
        lg += art.l_g.item() / cfg.batch_size;
        total += art.total.item() / cfg.batch_size;
      }
      val_csv << it << "," << lp << "," << lg << "," << total << "\n";
      val_csv.flush();
    }
  }
  if (!fs::exists(res.checkpoint_path)) model.save(res.checkpoint_path);
  return res;
}

}  // namespace md
