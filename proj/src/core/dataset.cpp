#include "core/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace md {

namespace {

constexpr float kSkySentinel = 1e9f;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(path + ": read failed");
  return data;
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out.good()) throw IoError(path + ": write failed");
}

[[noreturn]] void parse_fail(const std::string& path, size_t offset,
                             const std::string& what) {
  throw IoError(path + ": " + what + " at offset " + std::to_string(offset));
}

// Skips PNM whitespace and # comments, then reads one unsigned integer.
long pnm_int(const std::string& path, const std::string& buf, size_t& pos) {
  while (pos < buf.size()) {
    const char c = buf[pos];
    if (c == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= buf.size() || !std::isdigit(static_cast<unsigned char>(buf[pos])))
    parse_fail(path, pos, "expected integer");
  long v = 0;
  while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
    v = v * 10 + (buf[pos] - '0');
    if (v > 1000000) parse_fail(path, pos, "unreasonable integer");
    ++pos;
  }
  return v;
}

json parse_json_file(const std::string& path) {
  const std::string buf = read_file(path);
  try {
    return json::parse(buf);
  } catch (const json::parse_error& e) {
    parse_fail(path, e.byte, e.what());
  }
}

Vec3 vec3_from(const json& j, const std::string& path, const char* key) {
  if (!j.is_array() || j.size() != 3)
    throw IoError(path + ": field '" + key + "' is not a 3-array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

std::string frame_stem(int k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%02d", k);
  return buf;
}

std::string scene_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04d", i);
  return buf;
}

}  // namespace

void write_ppm(const std::string& path, int width, int height,
               const std::vector<double>& rgb_chw) {
  if (rgb_chw.size() != static_cast<size_t>(3) * width * height)
    throw InvalidArgument("write_ppm: rgb size mismatch");
  std::string out = "P6\n" + std::to_string(width) + " " +
                    std::to_string(height) + "\n255\n";
  out.reserve(out.size() + static_cast<size_t>(3) * width * height);
  const size_t plane = static_cast<size_t>(width) * height;
  for (size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(rgb_chw[c * plane + i], 0.0, 1.0);
      out.push_back(static_cast<char>(
          static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  write_file(path, out);
}

void read_ppm(const std::string& path, int& width, int& height,
              std::vector<double>& rgb_chw) {
  const std::string buf = read_file(path);
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '6')
    parse_fail(path, 0, "expected P6 magic");
  size_t pos = 2;
  const long w = pnm_int(path, buf, pos);
  const long h = pnm_int(path, buf, pos);
  const long maxval = pnm_int(path, buf, pos);
  if (w <= 0 || h <= 0) parse_fail(path, pos, "bad dimensions");
  if (maxval != 255) parse_fail(path, pos, "unsupported maxval");
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
    parse_fail(path, pos, "expected whitespace after maxval");
  ++pos;  // exactly one whitespace byte before the raster
  const size_t plane = static_cast<size_t>(w) * h;
  if (buf.size() - pos < 3 * plane)
    parse_fail(path, buf.size(), "truncated raster");
  width = static_cast<int>(w);
  height = static_cast<int>(h);
  rgb_chw.assign(3 * plane, 0.0);
  for (size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const unsigned char b = static_cast<unsigned char>(buf[pos + 3 * i + c]);
      rgb_chw[c * plane + i] = b / 255.0;
    }
}

void write_pfm(const std::string& path, int width, int height,
               const std::vector<double>& depth) {
  if (depth.size() != static_cast<size_t>(width) * height)
    throw InvalidArgument("write_pfm: depth size mismatch");
  std::string out = "Pf\n" + std::to_string(width) + " " +
                    std::to_string(height) + "\n-1.0\n";
  out.reserve(out.size() + depth.size() * 4);
  // PFM rows run bottom to top
  for (int v = height - 1; v >= 0; --v)
    for (int u = 0; u < width; ++u) {
      const double d = depth[static_cast<size_t>(v) * width + u];
      const float f = std::isinf(d) ? kSkySentinel : static_cast<float>(d);
      char bytes[4];
      std::memcpy(bytes, &f, 4);  // little-endian host, scale is negative
      out.append(bytes, 4);
    }
  write_file(path, out);
}

void read_pfm(const std::string& path, int& width, int& height,
              std::vector<double>& depth) {
  const std::string buf = read_file(path);
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != 'f')
    parse_fail(path, 0, "expected Pf magic");
  size_t pos = 2;
  const long w = pnm_int(path, buf, pos);
  const long h = pnm_int(path, buf, pos);
  while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos])))
    ++pos;
  size_t scale_end = pos;
  while (scale_end < buf.size() &&
         !std::isspace(static_cast<unsigned char>(buf[scale_end])))
    ++scale_end;
  double scale = 0.0;
  try {
    scale = std::stod(buf.substr(pos, scale_end - pos));
  } catch (const std::exception&) {
    parse_fail(path, pos, "bad scale");
  }
  if (scale >= 0.0) parse_fail(path, pos, "big-endian PFM unsupported");
  pos = scale_end;
  if (pos >= buf.size()) parse_fail(path, pos, "truncated header");
  ++pos;  // single whitespace byte before the raster
  const size_t plane = static_cast<size_t>(w) * h;
  if (buf.size() - pos < 4 * plane) parse_fail(path, buf.size(), "truncated raster");
  width = static_cast<int>(w);
  height = static_cast<int>(h);
  depth.assign(plane, 0.0);
  for (long v = h - 1; v >= 0; --v)
    for (long u = 0; u < w; ++u) {
      float f;
      std::memcpy(&f, buf.data() + pos, 4);
      pos += 4;
      depth[static_cast<size_t>(v) * w + u] =
          f >= kSkySentinel ? kInf : static_cast<double>(f);
    }
}

void write_scene(const std::string& scene_dir, const SceneSpec& spec,
                 const std::vector<RenderedFrame>& frames) {
  std::error_code ec;
  fs::create_directories(scene_dir, ec);
  if (ec) throw IoError(scene_dir + ": cannot create directory: " + ec.message());

  json meta;
  meta["intrinsics"] = {{"fx", spec.intrinsics.fx},
                        {"fy", spec.intrinsics.fy},
                        {"cx", spec.intrinsics.cx},
                        {"cy", spec.intrinsics.cy}};
  meta["velocity"] = spec.velocity;
  meta["rotation_velocity"] = spec.rotation_velocity;
  meta["seed"] = spec.seed;
  meta["frames_per_scene"] = spec.frames_per_scene;
  json jframes = json::array();
  for (size_t k = 0; k < frames.size(); ++k) {
    const std::string stem = scene_dir + "/" + frame_stem(static_cast<int>(k));
    write_ppm(stem + ".ppm", frames[k].width, frames[k].height, frames[k].rgb);
    write_pfm(stem + ".pfm", frames[k].width, frames[k].height, frames[k].depth);
    const Vec3 angles = matrix_to_euler(frames[k].cam_to_world.R);
    jframes.push_back({{"angles", angles}, {"t", frames[k].cam_to_world.t}});
  }
  meta["frames"] = jframes;
  write_file(scene_dir + "/metadata.json", meta.dump(2) + "\n");
}

SceneData load_scene(const std::string& scene_dir) {
  const std::string meta_path = scene_dir + "/metadata.json";
  if (!fs::exists(meta_path)) throw IoError(meta_path + ": missing metadata file");
  const json meta = parse_json_file(meta_path);

  SceneData scene;
  try {
    const json& k = meta.at("intrinsics");
    scene.intrinsics.fx = k.at("fx").get<double>();
    scene.intrinsics.fy = k.at("fy").get<double>();
    scene.intrinsics.cx = k.at("cx").get<double>();
    scene.intrinsics.cy = k.at("cy").get<double>();
    scene.velocity = vec3_from(meta.at("velocity"), meta_path, "velocity");
    scene.rotation_velocity =
        vec3_from(meta.at("rotation_velocity"), meta_path, "rotation_velocity");
    scene.seed = meta.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    throw IoError(meta_path + ": " + e.what());
  }
  scene.intrinsics.validate();

  const json& jframes = meta.at("frames");
  if (!jframes.is_array() || jframes.empty())
    throw IoError(meta_path + ": frames list missing or empty");
  for (size_t k = 0; k < jframes.size(); ++k) {
    FrameData f;
    const std::string stem = scene_dir + "/" + frame_stem(static_cast<int>(k));
    std::vector<double> rgb;
    read_ppm(stem + ".ppm", f.width, f.height, rgb);
    int dw = 0, dh = 0;
    read_pfm(stem + ".pfm", dw, dh, f.depth);
    if (dw != f.width || dh != f.height)
      throw IoError(stem + ".pfm: depth resolution differs from rgb");
    f.rgb = Tensor::from_data({3, f.height, f.width}, std::move(rgb));
    const Vec3 angles = vec3_from(jframes[k].at("angles"), meta_path, "angles");
    const Vec3 t = vec3_from(jframes[k].at("t"), meta_path, "t");
    f.cam_to_world.R = euler_to_matrix(angles);
    f.cam_to_world.t = t;
    scene.frames.push_back(std::move(f));
  }
  return scene;
}

void write_index(const std::string& root, const DatasetIndex& index) {
  json j;
  j["scenes"] = index.scenes;
  j["train"] = index.train;
  j["val"] = index.val;
  write_file(root + "/index.json", j.dump(2) + "\n");
}

DatasetIndex load_index(const std::string& root) {
  const std::string path = root + "/index.json";
  if (!fs::exists(path)) throw IoError(path + ": missing index file");
  const json j = parse_json_file(path);
  DatasetIndex index;
  try {
    index.scenes = j.at("scenes").get<std::vector<std::string>>();
    index.train = j.at("train").get<std::vector<std::string>>();
    index.val = j.at("val").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
  return index;
}

DatasetIndex make_split(int num_scenes) {
  if (num_scenes < 1) throw InvalidArgument("make_split: need at least one scene");
  DatasetIndex index;
  for (int i = 0; i < num_scenes; ++i) index.scenes.push_back(scene_name(i));
  long val_count = std::lround(0.25 * num_scenes);
  val_count = std::clamp(val_count, 1L, static_cast<long>(num_scenes) - 1);
  if (num_scenes == 1) val_count = 0;
  const int train_count = num_scenes - static_cast<int>(val_count);
  for (int i = 0; i < num_scenes; ++i)
    (i < train_count ? index.train : index.val).push_back(index.scenes[i]);
  return index;
}

void write_dataset(const std::vector<GeneratedScene>& scenes,
                   const std::string& root) {
  if (scenes.empty()) throw InvalidArgument("write_dataset: no scenes");
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError(root + ": cannot create directory: " + ec.message());
  DatasetIndex index = make_split(static_cast<int>(scenes.size()));
  for (size_t i = 0; i < scenes.size(); ++i)
    write_scene(root + "/" + index.scenes[i], scenes[i].spec, scenes[i].frames);
  write_index(root, index);
}

DatasetIndex generate_dataset(const std::string& root, const SceneGenConfig& cfg,
                              int num_scenes, uint64_t seed) {
  if (num_scenes < 1)
    throw InvalidArgument("generate_dataset: need at least one scene");
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError(root + ": cannot create directory: " + ec.message());
  DatasetIndex index = make_split(num_scenes);

  std::exception_ptr eptr = nullptr;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < num_scenes; ++i) {
    try {
      const SceneSpec spec = random_scene_spec(cfg, Rng::mix(seed, i));
      const auto frames = generate_scene(spec);
      write_scene(root + "/" + index.scenes[i], spec, frames);
    } catch (...) {
#pragma omp critical
      if (!eptr) eptr = std::current_exception();
    }
  }
  if (eptr) std::rethrow_exception(eptr);
  write_index(root, index);
  return index;
}

}  // namespace md
