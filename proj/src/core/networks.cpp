#include "core/networks.hpp"

#include <algorithm>
#include <cmath>

#include "core/checkpoint.hpp"
#include "core/error.hpp"
#include "core/rng.hpp"

namespace md {

namespace {

constexpr double kDepthEps = 0.01;    // floor above the ELU+1 shift
constexpr double kPoseScale = 0.01;   // raw pose output scaling
constexpr int kPoseLevels = 5;        // stride-2 encoder depth at desk scale

int level_channels(int base, int level) {
  return base * std::min(1 << level, 8);
}

Tensor init_conv(Rng& rng, int out_c, int in_c, int k) {
  const double bound = std::sqrt(1.0 / (in_c * k * k));
  auto w = Tensor::zeros({out_c, in_c, k, k}, true);
  for (auto& v : w.mutable_value()) v = rng.uniform(-bound, bound);
  return w;
}

Tensor zero_param(std::vector<int> shape) {
  return Tensor::zeros(std::move(shape), true);
}

const Tensor& get(const ParamMap& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end())
    throw InvalidArgument("missing parameter '" + name + "'");
  return it->second;
}

void check_image(const Tensor& t, int channels, const char* who) {
  if (t.shape().size() != 3 || t.dim(0) != channels)
    throw InvalidArgument(std::string(who) + ": expected [" +
                          std::to_string(channels) + ",H,W] input");
}

}  // namespace

int64_t param_count(const ParamMap& params) {
  int64_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

void DepthNetConfig::validate() const {
  if (base_channels < 1 || num_levels < 1 || num_output_scales < 1)
    throw InvalidArgument("depth net config: fields must be positive");
  if (num_output_scales > num_levels)
    throw InvalidArgument("depth net config: more output scales than levels");
}

void PoseNetConfig::validate() const {
  if (base_channels < 1) throw InvalidArgument("pose net config: bad channels");
  if (num_frames < 2) throw InvalidArgument("pose net config: need >= 2 frames");
}

DepthNet DepthNet::create(const DepthNetConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  DepthNet net;
  net.cfg = cfg;
  const int L = cfg.num_levels;

  int in_c = 6;
  for (int l = 0; l < L; ++l) {
    const int out_c = level_channels(cfg.base_channels, l);
    net.params["enc" + std::to_string(l) + "/w"] = init_conv(rng, out_c, in_c, 3);
    net.params["enc" + std::to_string(l) + "/b"] = zero_param({out_c});
    in_c = out_c;
  }
  int cur = in_c;  // bottleneck channels
  for (int j = L - 2; j >= 0; --j) {
    const int skip_c = level_channels(cfg.base_channels, j);
    net.params["dec" + std::to_string(j) + "/w"] =
        init_conv(rng, skip_c, cur + skip_c, 3);
    net.params["dec" + std::to_string(j) + "/b"] = zero_param({skip_c});
    cur = skip_c;
  }
  net.params["decf/w"] = init_conv(rng, cfg.base_channels, cur, 3);
  net.params["decf/b"] = zero_param({cfg.base_channels});

  for (int s = 0; s < cfg.num_output_scales; ++s) {
    const int feat_c = s == 0 ? cfg.base_channels
                              : level_channels(cfg.base_channels, s - 1);
    // prediction heads start at zero so the first depth estimate is flat
    net.params["head" + std::to_string(s) + "/w"] = zero_param({1, feat_c, 3, 3});
    net.params["head" + std::to_string(s) + "/b"] = zero_param({1});
  }
  return net;
}

std::vector<Tensor> DepthNet::forward(const Tensor& ref_stab,
                                      const Tensor& target) const {
  check_image(ref_stab, 3, "depth net");
  check_image(target, 3, "depth net");
  if (ref_stab.dim(1) != target.dim(1) || ref_stab.dim(2) != target.dim(2))
    throw InvalidArgument("depth net: input extents differ");
  const int L = cfg.num_levels;
  const int H = target.dim(1), W = target.dim(2);
  if (H % (1 << L) || W % (1 << L))
    throw InvalidArgument("depth net: extents must be divisible by " +
                          std::to_string(1 << L));

  Tensor x = concat0(ref_stab, target);
  std::vector<Tensor> enc;
  for (int l = 0; l < L; ++l) {
    const std::string p = "enc" + std::to_string(l);
    x = relu(conv2d(x, get(params, p + "/w"), get(params, p + "/b"), 2, 1));
    enc.push_back(x);
  }

  std::vector<Tensor> dec(L - 1);
  Tensor d = enc[L - 1];
  for (int j = L - 2; j >= 0; --j) {
    const std::string p = "dec" + std::to_string(j);
    d = relu(conv2d(concat0(upsample2x(d), enc[j]), get(params, p + "/w"),
                    get(params, p + "/b"), 1, 1));
    dec[j] = d;
  }
  const Tensor full = relu(conv2d(upsample2x(d), get(params, "decf/w"),
                                  get(params, "decf/b"), 1, 1));

  std::vector<Tensor> zetas;
  for (int s = 0; s < cfg.num_output_scales; ++s) {
    const Tensor& feat = s == 0 ? full : dec[s - 1];
    const std::string p = "head" + std::to_string(s);
    const Tensor raw =
        conv2d(feat, get(params, p + "/w"), get(params, p + "/b"), 1, 1);
    zetas.push_back(reshape(add(elu(raw), 1.0 + kDepthEps),
                            {feat.dim(1), feat.dim(2)}));
  }
  return zetas;
}

PoseNet PoseNet::create(const PoseNetConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  PoseNet net;
  net.cfg = cfg;
  int in_c = 3 * cfg.num_frames;
  for (int l = 0; l < kPoseLevels; ++l) {
    const int out_c = level_channels(cfg.base_channels, l);
    net.params["enc" + std::to_string(l) + "/w"] = init_conv(rng, out_c, in_c, 3);
    net.params["enc" + std::to_string(l) + "/b"] = zero_param({out_c});
    in_c = out_c;
  }
  const int out_dim = 6 * (cfg.num_frames - 1);
  // zero prediction layer: every pose starts at the identity
  net.params["pred/w"] = zero_param({out_dim, in_c, 1, 1});
  net.params["pred/b"] = zero_param({out_dim});
  return net;
}

Tensor PoseNet::forward(const Tensor& frames) const {
  check_image(frames, 3 * cfg.num_frames, "pose net");
  Tensor x = frames;
  for (int l = 0; l < kPoseLevels; ++l) {
    const std::string p = "enc" + std::to_string(l);
    x = relu(conv2d(x, get(params, p + "/w"), get(params, p + "/b"), 2, 1));
  }
  const Tensor pred =
      conv2d(x, get(params, "pred/w"), get(params, "pred/b"), 1, 0);
  return mul(mean(pred, {1, 2}), kPoseScale);
}

std::vector<DiffPose> poses_from_output(const Tensor& flat, int num_frames) {
  if (flat.numel() != 6 * (num_frames - 1))
    throw InvalidArgument("poses_from_output: expected " +
                          std::to_string(6 * (num_frames - 1)) + " values, got " +
                          std::to_string(flat.numel()));
  std::vector<DiffPose> out;
  for (int i = 0; i < num_frames - 1; ++i) {
    const int64_t b = 6 * i;
    out.push_back(DiffPose::from_euler(
        element(flat, b + 0), element(flat, b + 1), element(flat, b + 2),
        element(flat, b + 3), element(flat, b + 4), element(flat, b + 5)));
  }
  out.push_back(DiffPose::identity());
  return out;
}

Model Model::create(const DepthNetConfig& dcfg, const PoseNetConfig& pcfg,
                    const NominalDisplacement& nd, uint64_t seed) {
  nd.validate();
  Model m;
  m.depth = DepthNet::create(dcfg, Rng::mix(seed, 1));
  m.pose = PoseNet::create(pcfg, Rng::mix(seed, 2));
  m.nd = nd;
  return m;
}

void Model::save(const std::string& path) const {
  ParamMap all;
  for (const auto& [name, t] : depth.params) all["depth/" + name] = t;
  for (const auto& [name, t] : pose.params) all["pose/" + name] = t;
  all["meta/depth.base_channels"] =
      Tensor::scalar(depth.cfg.base_channels);
  all["meta/depth.num_levels"] = Tensor::scalar(depth.cfg.num_levels);
  all["meta/depth.num_output_scales"] =
      Tensor::scalar(depth.cfg.num_output_scales);
  all["meta/pose.base_channels"] = Tensor::scalar(pose.cfg.base_channels);
  all["meta/pose.num_frames"] = Tensor::scalar(pose.cfg.num_frames);
  all["meta/d0"] = Tensor::scalar(nd.d0);
  all["meta/epsilon"] = Tensor::scalar(nd.epsilon);
  all["meta/iteration"] = Tensor::scalar(static_cast<double>(iteration));
  save_params(path, all);
}

Model Model::load(const std::string& path) {
  const ParamMap all = load_params(path);
  auto meta = [&](const std::string& key) {
    auto it = all.find("meta/" + key);
    if (it == all.end()) throw IoError("checkpoint missing meta/" + key);
    return it->second.item();
  };
  DepthNetConfig dcfg;
  dcfg.base_channels = static_cast<int>(meta("depth.base_channels"));
  dcfg.num_levels = static_cast<int>(meta("depth.num_levels"));
  dcfg.num_output_scales = static_cast<int>(meta("depth.num_output_scales"));
  PoseNetConfig pcfg;
  pcfg.base_channels = static_cast<int>(meta("pose.base_channels"));
  pcfg.num_frames = static_cast<int>(meta("pose.num_frames"));
  NominalDisplacement nd;
  nd.d0 = meta("d0");
  nd.epsilon = meta("epsilon");

  Model m = create(dcfg, pcfg, nd, 0);
  m.iteration = static_cast<int64_t>(meta("iteration"));
  auto fill = [&](ParamMap& dst, const std::string& prefix) {
    for (auto& [name, t] : dst) {
      auto it = all.find(prefix + name);
      if (it == all.end())
        throw IoError("checkpoint missing parameter " + prefix + name);
      if (it->second.shape() != t.shape())
        throw IoError("checkpoint shape mismatch for " + prefix + name);
      t.mutable_value() = it->second.value();
    }
  };
  fill(m.depth.params, "depth/");
  fill(m.pose.params, "pose/");
  const size_t expected = m.depth.params.size() + m.pose.params.size() + 8;
  if (all.size() != expected)
    throw IoError("checkpoint has unexpected extra entries: " + path);
  return m;
}

}  // namespace md
