// SPDX-License-Identifier: Apache-2.0
//
// Named-array container.
//
// Layout:
//   bytes 0..7    magic "LEARNCK1"
//   bytes 8..15   manifest length L, unsigned little-endian
//   next L bytes  JSON manifest {"arrays": [{"name", "shape", "offset"}], "payload_bytes"}
//   remainder     payload: every array's elements as little-endian IEEE-754 doubles,
//                 at the byte offset recorded in the manifest
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "learn/diff/tensor.hpp"

namespace learn::diff {

struct NamedArray {
  std::string name;
  Tensor value;
  bool operator==(const NamedArray&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray>& arrays);
std::vector<NamedArray> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

}  // namespace learn::diff
