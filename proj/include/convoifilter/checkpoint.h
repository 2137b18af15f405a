// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Binary tensor container used by every checkpoint:
//
//   "CVFCKPT\0"                         8-byte magic
//   u32 format version                   (kCheckpointVersion)
//   u32 n, n bytes                       config block, UTF-8 JSON
//   u32 tensor count
//   per tensor:
//     u32 n, n bytes                     name
//     u32 rank (always 2), u32 rows, u32 cols
//     rows*cols f32                      row-major values
//
// All integers and floats are little-endian. Anything after the last tensor
// is a format error.

#ifndef CONVOIFILTER_CHECKPOINT_H_
#define CONVOIFILTER_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "convoifilter/dsp.h"
#include "convoifilter/nn.h"
#include "json.hpp"

namespace cvf {

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  nlohmann::ordered_json config;
  std::vector<std::pair<std::string, MatrixF>> tensors;
};

void write_checkpoint_file(const std::filesystem::path& path,
                           const CheckpointData& data);
// Throws FormatError on bad magic, version mismatch or truncation.
CheckpointData read_checkpoint_file(const std::filesystem::path& path);

// Copies tensors into params by name; every param must be present with a
// matching shape.
void assign_tensors(const CheckpointData& data, const ParamRefs& params);
void append_tensors(CheckpointData& data, const std::vector<const Param*>& params);

}  // namespace cvf

#endif  // CONVOIFILTER_CHECKPOINT_H_
