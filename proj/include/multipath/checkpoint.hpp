#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "multipath/autograd.hpp"

namespace multipath {

// Checkpoint layout: an 8-byte little-endian header length, the JSON header
// (format tag, caller metadata, tensor directory with names/shapes/offsets),
// then a flat payload of little-endian 32-bit floats. Values written through
// here must already be 32-bit representable for lossless round trips; the
// model quantizes its parameters accordingly after every update.

void save_checkpoint(
    const std::string& path,
    const std::vector<std::pair<std::string, Tensor>>& tensors,
    const nlohmann::json& meta);

struct LoadedCheckpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

// Throws std::runtime_error on IO or format problems.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace multipath
