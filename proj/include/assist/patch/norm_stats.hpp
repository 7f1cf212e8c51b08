#ifndef ASSIST_PATCH_NORM_STATS_HPP_
#define ASSIST_PATCH_NORM_STATS_HPP_

#include <array>

#include <json.hpp>

namespace assist::patch {

// Per-channel mean and standard deviation of training pixels (values in [0,1]).
struct NormStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};

  bool valid() const { return std[0] > 0.0 && std[1] > 0.0 && std[2] > 0.0; }
  bool operator==(const NormStats&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(NormStats, mean, std)

}  // namespace assist::patch

#endif  // ASSIST_PATCH_NORM_STATS_HPP_
