#pragma once

#include <string>

#include "scevo/scale_propagation.hpp"

namespace scevo {

// Binary layout (little-endian):
//   "SCEW" | u32 version | u32 tensor_count
//   per tensor: u32 name_len | name bytes | u32 rank | u32 dims[rank] |
//               f32 payload (row-major)
//   u32 CRC-32 (IEEE) of every preceding byte
void save_weight_bundle(const std::string& path, const WeightBundle& bundle);
WeightBundle load_weight_bundle(const std::string& path);

}  // namespace scevo
