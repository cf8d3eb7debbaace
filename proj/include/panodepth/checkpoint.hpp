#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "panodepth/models.hpp"

namespace panodepth {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model<float> model;
  std::uint64_t step = 0;
};

// Layout: "ODCK", u32 version, u32 spec length + spec text, u64 step, u32 tensor
// count, then per tensor {u32 name length + name, u32 rank, u32 dims[rank],
// float32 payload}. All integers little-endian.
std::string encode_checkpoint(const Model<float>& model, std::uint64_t step);
// Rebuilds the model from the embedded spec and checks every tensor against it.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const Model<float>& model, std::uint64_t step = 0);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace panodepth
