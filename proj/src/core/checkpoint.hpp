#pragma once

#include <string>

#include "core/networks.hpp"

namespace md {

// Binary parameter container: magic "MDNC", version u32 (currently 1),
// little-endian throughout, then per parameter in sorted-name order:
// u32 name length, utf-8 name, u32 rank, u32 extents, f64 payload.
void save_params(const std::string& path, const ParamMap& params);
ParamMap load_params(const std::string& path);

}  // namespace md
