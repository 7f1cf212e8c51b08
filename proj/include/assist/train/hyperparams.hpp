#ifndef ASSIST_TRAIN_HYPERPARAMS_HPP_
#define ASSIST_TRAIN_HYPERPARAMS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include <json.hpp>

#include "assist/core/error.hpp"
#include "assist/core/rng.hpp"

namespace assist::train {

struct LrRange {
  double lo = 1e-7;
  double hi = 1e-4;

  bool operator==(const LrRange&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LrRange, lo, hi)

inline constexpr LrRange kDefaultLrRange{1e-7, 1e-4};

struct Hyperparams {
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  std::int64_t iterations = 2000;
  int batch_size = 10;
  double momentum = 0.9;
  std::int64_t decay_every = 20000;
  double decay_factor = 0.1;
  std::map<std::string, double> extra;  // open bag for future knobs

  bool operator==(const Hyperparams&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Hyperparams, learning_rate, seed, iterations,
                                                batch_size, momentum, decay_every, decay_factor,
                                                extra)

// Learning rate drawn log-uniformly on [range.lo, range.hi].
inline Hyperparams sample_hyperparams(std::uint64_t seed, LrRange range = kDefaultLrRange) {
  require(range.lo > 0.0 && range.lo <= range.hi, "invalid learning-rate range");
  auto rng = CounterRng::stream(seed, "hyperparams");
  Hyperparams hp;
  hp.seed = seed;
  const double lo = std::log10(range.lo), hi = std::log10(range.hi);
  hp.learning_rate = std::clamp(std::pow(10.0, rng.uniform(lo, hi)), range.lo, range.hi);
  return hp;
}

}  // namespace assist::train

#endif  // ASSIST_TRAIN_HYPERPARAMS_HPP_
