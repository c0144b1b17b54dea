#include <unistd.h>

#include <cstdio>

#include "core/checkpoint.hpp"
#include "core/error.hpp"
#include "core/networks.hpp"
#include "core/rng.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace md;

namespace {

Tensor random_image(Rng& rng, int c, int h, int w) {
  auto t = Tensor::zeros({c, h, w});
  for (auto& v : t.mutable_value()) v = rng.uniform(0.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("depth net output shapes and initial value") {
  auto net = DepthNet::create({}, 7);
  Rng rng(1);
  auto ref = random_image(rng, 3, 64, 64);
  auto tgt = random_image(rng, 3, 64, 64);
  auto zetas = net.forward(ref, tgt);
  REQUIRE(zetas.size() == 4);
  CHECK(zetas[0].shape() == std::vector<int>{64, 64});
  CHECK(zetas[1].shape() == std::vector<int>{32, 32});
  CHECK(zetas[2].shape() == std::vector<int>{16, 16});
  CHECK(zetas[3].shape() == std::vector<int>{8, 8});
  // zero-initialized heads predict the flat ELU(0)+1+0.01 surface
  for (const auto& z : zetas)
    for (double v : z.value()) CHECK(v == doctest::Approx(1.01).epsilon(1e-15));

  CHECK_THROWS_AS(net.forward(random_image(rng, 3, 48, 64), tgt),
                  InvalidArgument);
  CHECK_THROWS_AS(net.forward(random_image(rng, 3, 40, 40),
                              random_image(rng, 3, 40, 40)),
                  InvalidArgument);
}

TEST_CASE("depth stays positive with randomized heads") {
  auto net = DepthNet::create({}, 11);
  Rng rng(12);
  for (auto& [name, t] : net.params)
    if (name.rfind("head", 0) == 0)
      for (auto& v : t.mutable_value()) v = rng.uniform(-3.0, 3.0);
  auto z = net.forward(random_image(rng, 3, 32, 32), random_image(rng, 3, 32, 32));
  for (const auto& level : z)
    for (double v : level.value()) CHECK(v > 0.0);
}

TEST_CASE("pose net zero-initialized head gives identity poses") {
  PoseNetConfig cfg;
  cfg.num_frames = 5;
  auto net = PoseNet::create(cfg, 3);
  Rng rng(4);
  auto frames = random_image(rng, 15, 32, 32);
  auto out = net.forward(frames);
  REQUIRE(out.numel() == 24);
  for (double v : out.value()) CHECK(v == 0.0);

  auto poses = poses_from_output(out, 5);
  REQUIRE(poses.size() == 5);
  for (const auto& p : poses) {
    const Pose e = p.eval();
    const Mat3 id = mat_identity();
    for (int i = 0; i < 9; ++i) CHECK(e.R[i] == id[i]);
    for (int i = 0; i < 3; ++i) CHECK(e.t[i] == 0.0);
  }
}

TEST_CASE("initialization is deterministic and counted") {
  auto a = DepthNet::create({}, 99);
  auto b = DepthNet::create({}, 99);
  REQUIRE(a.params.size() == b.params.size());
  for (const auto& [name, t] : a.params)
    CHECK(mdtest::bits_equal(t.value(), b.params.at(name).value()));
  auto c = DepthNet::create({}, 100);
  bool any_diff = false;
  for (const auto& [name, t] : a.params)
    if (!mdtest::bits_equal(t.value(), c.params.at(name).value())) any_diff = true;
  CHECK(any_diff);

  // regression anchors for the default configuration
  CHECK(param_count(a.params) == 172972);
  CHECK(param_count(PoseNet::create({}, 1).params) == 63880);
}

TEST_CASE("gradients reach both networks") {
  auto model = Model::create({}, {}, {}, 55);
  Rng rng(5);
  auto ref = random_image(rng, 3, 32, 32);
  auto tgt = random_image(rng, 3, 32, 32);
  auto frames = random_image(rng, 15, 32, 32);
  // zero-initialized output layers block upstream gradient; randomize them
  for (auto& [name, t] : model.depth.params)
    if (name.rfind("head", 0) == 0)
      for (auto& v : t.mutable_value()) v = rng.uniform(-0.5, 0.5);
  for (auto& v : model.pose.params.at("pred/w").mutable_value())
    v = rng.uniform(-0.5, 0.5);

  auto zetas = model.depth.forward(ref, tgt);
  auto pose_out = model.pose.forward(frames);
  Tensor loss = mean(zetas[0]);
  for (size_t s = 1; s < zetas.size(); ++s) loss = add(loss, mean(zetas[s]));
  loss = add(loss, sum(mul(pose_out, pose_out)));
  md::backward(loss);

  int depth_nonzero = 0, pose_nonzero = 0;
  for (const auto& [name, t] : model.depth.params) {
    for (double g : t.grad())
      if (g != 0.0) {
        ++depth_nonzero;
        break;
      }
  }
  for (const auto& [name, t] : model.pose.params) {
    for (double g : t.grad())
      if (g != 0.0) {
        ++pose_nonzero;
        break;
      }
  }
  CHECK(depth_nonzero * 2 > static_cast<int>(model.depth.params.size()));
  CHECK(pose_nonzero * 2 > static_cast<int>(model.pose.params.size()));
}

TEST_CASE("checkpoint round trip preserves everything") {
  auto model = Model::create({}, {}, {}, 123);
  model.iteration = 777;
  const std::string path = "ckpt_roundtrip.bin";
  model.save(path);
  auto back = Model::load(path);
  CHECK(back.iteration == 777);
  CHECK(back.depth.cfg.base_channels == model.depth.cfg.base_channels);
  CHECK(back.depth.cfg.num_levels == model.depth.cfg.num_levels);
  CHECK(back.pose.cfg.num_frames == model.pose.cfg.num_frames);
  CHECK(back.nd.d0 == model.nd.d0);
  CHECK(back.nd.epsilon == model.nd.epsilon);
  for (const auto& [name, t] : model.depth.params)
    CHECK(mdtest::bits_equal(t.value(), back.depth.params.at(name).value()));
  for (const auto& [name, t] : model.pose.params)
    CHECK(mdtest::bits_equal(t.value(), back.pose.params.at(name).value()));
  std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects damaged files") {
  CHECK_THROWS_AS(load_params("missing_checkpoint.bin"), IoError);

  const std::string path = "ckpt_damaged.bin";
  {
    FILE* f = fopen(path.c_str(), "wb");
    REQUIRE(f);
    fwrite("NOPE", 1, 4, f);
    fclose(f);
  }
  CHECK_THROWS_AS(load_params(path), IoError);

  auto model = Model::create({}, {}, {}, 9);
  model.save(path);
  // truncate mid-payload
  {
    FILE* f = fopen(path.c_str(), "rb+");
    REQUIRE(f);
    fseek(f, 0, SEEK_END);
    const long size = ftell(f);
    fclose(f);
    REQUIRE(truncate(path.c_str(), size / 2) == 0);
  }
  CHECK_THROWS_AS(Model::load(path), IoError);
  std::remove(path.c_str());
}
