#pragma once

#include <string>
#include <vector>

#include "shan/model.hpp"

namespace shan {

// Flat binary container: 4-byte magic "SHAN", u32 little-endian header
// length, a JSON header (format version, dims, neuron and model config,
// meta-path names, tensor shapes), then each tensor's values as
// little-endian 64-bit floats in declaration order W1, W2, b, q, W3 and,
// for PLIF, tau_param.
struct Checkpoint {
  ModelParams params;
  ModelConfig config;
  std::vector<std::string> metapath_names;
};

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const ModelConfig& config,
                     const std::vector<std::string>& metapath_names);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace shan
