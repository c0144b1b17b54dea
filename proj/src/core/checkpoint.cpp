#include "core/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "core/error.hpp"

namespace md {

namespace {

constexpr char kMagic[4] = {'M', 'D', 'N', 'C'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ofstream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32(std::ifstream& is, uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
      static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
  return true;
}

void put_f64(std::ofstream& os, double d) {
  uint64_t u;
  std::memcpy(&u, &d, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

bool get_f64(std::ifstream& is, double& d) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
  std::memcpy(&d, &u, 8);
  return true;
}

}  // namespace

void save_params(const std::string& path, const ParamMap& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  for (const auto& [name, t] : params) {  // std::map iterates sorted
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& shape = t.shape();
    put_u32(os, static_cast<uint32_t>(shape.size()));
    for (int e : shape) put_u32(os, static_cast<uint32_t>(e));
    for (double v : t.value()) put_f64(os, v);
  }
  if (!os.flush()) throw IoError("write failed: " + path);
}

ParamMap load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  uint32_t version;
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("bad magic in " + path);
  if (!get_u32(is, version) || version != kVersion)
    throw IoError("unsupported checkpoint version in " + path);
  ParamMap out;
  for (;;) {
    uint32_t name_len;
    if (!get_u32(is, name_len)) break;  // clean EOF
    if (name_len > 4096) throw IoError("oversized name in " + path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw IoError("truncated name in " + path);
    uint32_t rank;
    if (!get_u32(is, rank) || rank > 8) throw IoError("bad rank in " + path);
    std::vector<int> shape(rank);
    int64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      uint32_t e;
      if (!get_u32(is, e) || e == 0 || e > (1u << 24))
        throw IoError("bad extent in " + path);
      shape[i] = static_cast<int>(e);
      n *= e;
    }
    std::vector<double> data(n);
    for (int64_t i = 0; i < n; ++i)
      if (!get_f64(is, data[i]))
        throw IoError("truncated payload for '" + name + "' in " + path);
    if (!out.emplace(name, Tensor::from_data(std::move(shape), std::move(data)))
             .second)
      throw IoError("duplicate parameter '" + name + "' in " + path);
  }
  return out;
}

}  // namespace md
