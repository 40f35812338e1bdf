#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gaitlab/nn/tensor.hpp"

namespace gaitlab::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named float32 arrays plus string metadata. On disk: magic "GLCK",
/// version u32, metadata pairs, then (name, rank, dims, little-endian
/// float32 payload) per tensor, in insertion order.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gaitlab::nn
