#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "core/dataset.hpp"
#include "core/error.hpp"
#include "core/rng.hpp"
#include "core/stillbox.hpp"
#include "core/warp.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace md;
namespace fs = std::filesystem;

namespace {

SceneSpec basic_spec(int w, int h, int frames) {
  SceneSpec spec;
  spec.width = w;
  spec.height = h;
  spec.frames_per_scene = frames;
  spec.intrinsics = Intrinsics::centered(w, h);
  return spec;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

struct TmpDir {
  std::string path;
  explicit TmpDir(const std::string& name) : path("tmp_" + name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("sphere on the optical axis") {
  // odd resolution puts the principal point on an exact pixel
  auto spec = basic_spec(65, 65, 1);
  PrimitiveSpec s;
  s.kind = PrimitiveKind::kSphere;
  s.center = {0.0, 0.0, 6.0};
  s.half_size = {1.5, 1.5, 1.5};
  spec.primitives.push_back(s);
  auto frames = generate_scene(spec);
  REQUIRE(frames.size() == 1);
  const int cy = 32, cx = 32;
  CHECK(frames[0].depth[cy * 65 + cx] == 4.5);  // d - r, exact in float
  // a corner ray misses the sphere entirely
  CHECK(std::isinf(frames[0].depth[0]));
}

TEST_CASE("ground plane depth matches the ray-plane closed form") {
  auto spec = basic_spec(64, 48, 1);
  PrimitiveSpec plane;
  plane.kind = PrimitiveKind::kGroundPlane;
  plane.center = {0.0, -1.0, 0.0};
  spec.primitives.push_back(plane);
  auto frames = generate_scene(spec);
  const auto& k = spec.intrinsics;
  for (int v = 0; v < 48; ++v)
    for (int u = 0; u < 64; ++u) {
      const double dy = (v - k.cy) / k.fy;
      const double got = frames[0].depth[v * 64 + u];
      // independent closed form: o.y + tau * dy = -1 with o.y = 0
      if (dy < 0.0 && -1.0 / dy < 100.0) {
        const double expected = -1.0 / dy;
        CHECK(got == doctest::Approx(expected).epsilon(1e-6));
      } else {
        CHECK(std::isinf(got));
      }
    }
}

TEST_CASE("zero velocities freeze the scene") {
  auto spec = random_scene_spec({}, 77);
  spec.velocity = {0.0, 0.0, 0.0};
  spec.rotation_velocity = {0.0, 0.0, 0.0};
  spec.frames_per_scene = 5;
  auto frames = generate_scene(spec);
  REQUIRE(frames.size() == 5);
  for (int kf = 1; kf < 5; ++kf) {
    CHECK(mdtest::bits_equal(frames[kf].rgb, frames[0].rgb));
    CHECK(mdtest::bits_equal(frames[kf].depth, frames[0].depth));
  }
}

TEST_CASE("consecutive poses differ by exactly the constant step") {
  auto spec = random_scene_spec({}, 3);
  spec.frames_per_scene = 8;
  auto frames = generate_scene(spec);
  const Mat3 r_step = euler_to_matrix(spec.rotation_velocity);
  for (int kf = 0; kf + 1 < 8; ++kf) {
    const Mat3 expect_r = mat_mul(frames[kf].cam_to_world.R, r_step);
    const Vec3 expect_t = add3(frames[kf].cam_to_world.t, spec.velocity);
    for (int i = 0; i < 9; ++i)
      CHECK(frames[kf + 1].cam_to_world.R[i] == expect_r[i]);
    for (int i = 0; i < 3; ++i)
      CHECK(frames[kf + 1].cam_to_world.t[i] == expect_t[i]);
  }
  const Mat3 id = mat_identity();
  for (int i = 0; i < 9; ++i) CHECK(frames[0].cam_to_world.R[i] == id[i]);
}

TEST_CASE("identical spec renders identical bytes") {
  auto spec = random_scene_spec({}, 11);
  spec.frames_per_scene = 3;
  auto a = generate_scene(spec);
  auto b = generate_scene(spec);
  for (int kf = 0; kf < 3; ++kf) {
    CHECK(mdtest::bits_equal(a[kf].rgb, b[kf].rgb));
    CHECK(mdtest::bits_equal(a[kf].depth, b[kf].depth));
  }
  auto spec2 = random_scene_spec({}, 11);
  REQUIRE(spec2.primitives.size() == spec.primitives.size());
  for (size_t i = 0; i < spec.primitives.size(); ++i)
    for (int d = 0; d < 3; ++d)
      CHECK(spec2.primitives[i].center[d] == spec.primitives[i].center[d]);

  TmpDir tmp("determinism");
  write_scene(tmp.path + "/a", spec, a);
  write_scene(tmp.path + "/b", spec, b);
  for (const char* f : {"/frame_00.ppm", "/frame_00.pfm", "/metadata.json"})
    CHECK(slurp(tmp.path + "/a" + f) == slurp(tmp.path + "/b" + f));
}

TEST_CASE("random specs respect configured ranges") {
  SceneGenConfig cfg;
  for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    auto spec = random_scene_spec(cfg, seed);
    REQUIRE(spec.primitives.size() >= 2);
    CHECK(spec.primitives[0].kind == PrimitiveKind::kGroundPlane);
    CHECK(spec.primitives[1].kind == PrimitiveKind::kGroundPlane);
    // floor below the path, ceiling above it
    CHECK(spec.primitives[0].center[1] > 0.0);
    CHECK(spec.primitives[1].center[1] < 0.0);
    const int extra = static_cast<int>(spec.primitives.size()) - 2;
    CHECK(extra >= cfg.min_primitives);
    CHECK(extra <= cfg.max_primitives);
    const double speed = norm3(spec.velocity);
    CHECK(speed >= cfg.min_speed - 1e-12);
    CHECK(speed <= cfg.max_speed + 1e-12);
    for (int i = 0; i < 3; ++i)
      CHECK(std::abs(spec.rotation_velocity[i]) <= cfg.max_rotation_speed);
    generate_scene(spec);  // placement leaves the camera path clear
  }
}

TEST_CASE("camera inside a primitive is rejected") {
  auto spec = basic_spec(16, 16, 1);
  PrimitiveSpec s;
  s.kind = PrimitiveKind::kSphere;
  s.center = {0.0, 0.0, 0.2};
  s.half_size = {1.0, 1.0, 1.0};
  spec.primitives.push_back(s);
  CHECK_THROWS_AS(generate_scene(spec), InvalidArgument);

  auto empty = basic_spec(16, 16, 1);
  CHECK_THROWS_AS(generate_scene(empty), InvalidArgument);
}

TEST_CASE("ppm and pfm round trips") {
  TmpDir tmp("pix");
  std::vector<double> rgb(3 * 4 * 5);
  Rng rng(9);
  for (auto& v : rgb) v = std::round(rng.uniform() * 255.0) / 255.0;
  write_ppm(tmp.path + "/img.ppm", 5, 4, rgb);
  int w = 0, h = 0;
  std::vector<double> back;
  read_ppm(tmp.path + "/img.ppm", w, h, back);
  CHECK(w == 5);
  CHECK(h == 4);
  CHECK(mdtest::bits_equal(back, rgb));

  std::vector<double> depth = {1.5, kInf, 2.5, 0.25, kInf, 4096.0};
  write_pfm(tmp.path + "/d.pfm", 3, 2, depth);
  std::vector<double> dback;
  read_pfm(tmp.path + "/d.pfm", w, h, dback);
  CHECK(w == 3);
  CHECK(h == 2);
  REQUIRE(dback.size() == 6);
  CHECK(std::isinf(dback[1]));
  CHECK(std::isinf(dback[4]));
  CHECK(dback[0] == 1.5);
  CHECK(dback[2] == 2.5);
  CHECK(dback[3] == 0.25);
  CHECK(dback[5] == 4096.0);

  // corrupt header and payload
  std::string raw = slurp(tmp.path + "/img.ppm");
  std::ofstream(tmp.path + "/bad.ppm", std::ios::binary) << "P5\n1 1\n255\n ";
  CHECK_THROWS_AS(read_ppm(tmp.path + "/bad.ppm", w, h, back), IoError);
  std::ofstream(tmp.path + "/trunc.ppm", std::ios::binary)
      << raw.substr(0, raw.size() / 2);
  CHECK_THROWS_AS(read_ppm(tmp.path + "/trunc.ppm", w, h, back), IoError);
  CHECK_THROWS_AS(read_pfm(tmp.path + "/img.ppm", w, h, dback), IoError);
}

TEST_CASE("scene write and load round trip") {
  auto spec = random_scene_spec({}, 21);
  spec.frames_per_scene = 3;
  auto frames = generate_scene(spec);
  TmpDir tmp("scene_rt");
  const std::string dir = tmp.path + "/scene_0000";
  write_scene(dir, spec, frames);
  auto scene = load_scene(dir);
  CHECK(scene.seed == spec.seed);
  CHECK(scene.intrinsics.fx == spec.intrinsics.fx);
  CHECK(scene.intrinsics.cx == spec.intrinsics.cx);
  for (int i = 0; i < 3; ++i) {
    CHECK(scene.velocity[i] == spec.velocity[i]);
    CHECK(scene.rotation_velocity[i] == spec.rotation_velocity[i]);
  }
  REQUIRE(scene.frames.size() == 3);
  for (int kf = 0; kf < 3; ++kf) {
    const auto& got = scene.frames[kf];
    const auto& want = frames[kf];
    CHECK(got.width == want.width);
    CHECK(mdtest::bits_equal(got.rgb.value(), want.rgb));
    REQUIRE(got.depth.size() == want.depth.size());
    for (size_t i = 0; i < got.depth.size(); ++i) {
      if (std::isinf(want.depth[i]))
        CHECK(std::isinf(got.depth[i]));
      else
        CHECK(got.depth[i] == want.depth[i]);
    }
    for (int i = 0; i < 9; ++i)
      CHECK(got.cam_to_world.R[i] ==
            doctest::Approx(want.cam_to_world.R[i]).epsilon(1e-12));
    for (int i = 0; i < 3; ++i)
      CHECK(got.cam_to_world.t[i] == want.cam_to_world.t[i]);
  }

  try {
    load_scene(tmp.path + "/nope");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("metadata.json") != std::string::npos);
  }
}

TEST_CASE("dataset split and index round trip") {
  auto s1 = make_split(1);
  CHECK(s1.train.size() == 1);
  CHECK(s1.val.size() == 0);
  auto s4 = make_split(4);
  CHECK(s4.train.size() == 3);
  CHECK(s4.val.size() == 1);
  CHECK(s4.val[0] == "scene_0003");
  auto s20 = make_split(20);
  CHECK(s20.train.size() == 15);
  CHECK(s20.val.size() == 5);
  auto s2 = make_split(2);
  CHECK(s2.train.size() == 1);
  CHECK(s2.val.size() == 1);

  TmpDir tmp("index_rt");
  write_index(tmp.path, s4);
  auto back = load_index(tmp.path);
  CHECK(back.scenes == s4.scenes);
  CHECK(back.train == s4.train);
  CHECK(back.val == s4.val);
  try {
    load_index(tmp.path + "/missing");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("index.json") != std::string::npos);
  }
}

TEST_CASE("generate_dataset writes a loadable tree") {
  TmpDir tmp("gen");
  SceneGenConfig cfg;
  cfg.width = 32;
  cfg.height = 32;
  cfg.frames_per_scene = 3;
  auto index = generate_dataset(tmp.path, cfg, 4, 1234);
  CHECK(index.scenes.size() == 4);
  CHECK(index.train.size() == 3);
  CHECK(index.val.size() == 1);
  auto back = load_index(tmp.path);
  CHECK(back.scenes == index.scenes);
  for (const auto& name : index.scenes) {
    auto scene = load_scene(tmp.path + "/" + name);
    CHECK(scene.frames.size() == 3);
    CHECK(scene.frames[0].width == 32);
  }
  // regenerating with the same seed produces identical files
  TmpDir tmp2("gen2");
  generate_dataset(tmp2.path, cfg, 4, 1234);
  CHECK(slurp(tmp.path + "/scene_0002/frame_01.ppm") ==
        slurp(tmp2.path + "/scene_0002/frame_01.ppm"));
  CHECK(slurp(tmp.path + "/scene_0002/metadata.json") ==
        slurp(tmp2.path + "/scene_0002/metadata.json"));
}

TEST_CASE("ground truth depth and poses warp consistently") {
  // warping a neighbor into the target grid with exact depth and pose must
  // reproduce the target almost everywhere; failures are occlusions and
  // resampling blur, which the mean absorbs
  for (uint64_t seed : {5u, 17u}) {
    auto spec = random_scene_spec({}, seed);
    spec.frames_per_scene = 4;
    auto frames = generate_scene(spec);
    const int w = spec.width, h = spec.height;
    const int t = 1, s = 2;

    std::vector<double> zeta(frames[t].depth);
    std::vector<double> sky(static_cast<size_t>(w) * h, 0.0);
    for (size_t i = 0; i < zeta.size(); ++i) {
      if (std::isinf(zeta[i])) {
        zeta[i] = 1.0;  // placeholder, excluded below
        sky[i] = 1.0;
      }
    }
    auto src = Tensor::from_data({3, h, w}, frames[s].rgb);
    auto depth = Tensor::from_data({h, w}, zeta);
    const Pose rel = compose(inverse(frames[s].cam_to_world),
                             frames[t].cam_to_world);
    auto warped = inverse_warp(src, depth, DiffPose::constant(rel),
                               spec.intrinsics);

    auto wimg = warped.image.value();
    auto wmask = warped.mask.value();
    double err_sum = 0.0;
    long count = 0;
    const size_t plane = static_cast<size_t>(w) * h;
    for (size_t i = 0; i < plane; ++i) {
      if (wmask[i] != 1.0 || sky[i] != 0.0) continue;
      for (int c = 0; c < 3; ++c)
        err_sum += std::abs(wimg[c * plane + i] - frames[t].rgb[c * plane + i]);
      count += 3;
    }
    REQUIRE(count > static_cast<long>(plane));  // most pixels participate
    const double mean_err = err_sum / count;
    INFO("seed ", seed, " mean photometric error ", mean_err);
    CHECK(mean_err < 0.05);
  }
}
