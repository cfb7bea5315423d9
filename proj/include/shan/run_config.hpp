#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "shan/training.hpp"

namespace shan {

// Everything a run needs beyond the dataset path and seed list, parsed from
// a JSON config file. Every key is optional; unknown keys are rejected.
struct RunConfig {
  TrainConfig train;
  std::array<double, 3> split_ratios = {0.2, 0.1, 0.7};
  std::uint64_t split_seed = 0;

  static RunConfig defaults();
  static RunConfig from_file(const std::string& path);
  static RunConfig from_json_text(const std::string& text, const std::string& origin);
};

}  // namespace shan
