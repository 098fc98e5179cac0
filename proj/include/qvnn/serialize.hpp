#pragma once

#include <string>

#include "qvnn/model.hpp"

namespace qvnn {

// Binary model format, version 1. Little-endian throughout:
//   "QVNN" | u32 version | u32 arch-name length + bytes | u32 C,H,W | u32 classes |
//   u32 record count | records.
// Each record is a u8 layer tag, a u32 name length + bytes, the layer's extents as
// u32s, then its parameters as 32-bit IEEE-754 floats with quaternion planes in
// r,i,j,k order (batch norm stores gamma, beta planes, running mean planes, running
// variance, epsilon, momentum). The final record is always the classification head.
void save_model(const Model& model, const std::string& path);

// Rejects wrong magic, unsupported versions, unknown layer tags, and truncation with
// distinct errors. Parameters come back f32-quantized.
Model load_model(const std::string& path);

}  // namespace qvnn
