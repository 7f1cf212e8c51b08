#ifndef ASSIST_CORE_RNG_HPP_
#define ASSIST_CORE_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>
#include <type_traits>
#include <utility>

namespace assist {

inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return splitmix64(h);
}

// Counter-based generator: the i-th draw of a stream is a pure function of
// (key, i), so streams can be split per slide / reader / trial without any
// shared state and produce identical sequences on every platform. All
// distributions are implemented here rather than via <random> because the
// standard distributions are implementation-defined.
class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t key) : key_(splitmix64(key)) {}

  template <typename... Parts>
    requires(std::is_integral_v<Parts> && ...)
  static constexpr CounterRng stream(std::uint64_t seed, Parts... parts) {
    std::uint64_t key = splitmix64(seed);
    ((key = splitmix64(key ^ static_cast<std::uint64_t>(parts))), ...);
    return CounterRng(key);
  }

  static constexpr CounterRng stream(std::uint64_t seed, std::string_view tag,
                                     std::uint64_t extra = 0) {
    return CounterRng(splitmix64(splitmix64(seed) ^ hash_string(tag)) ^ extra);
  }

  constexpr std::uint64_t key() const { return key_; }
  constexpr std::uint64_t counter() const { return counter_; }

  constexpr std::uint64_t next_u64() {
    return splitmix64(key_ ^ splitmix64(counter_++));
  }

  // Uniform on [0, 1) with 53 random bits.
  constexpr double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  constexpr double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [0, n), unbiased (rejection on the low zone).
  constexpr std::uint64_t uniform_int(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; one normal per pair of uniforms, no cached state.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace assist

#endif  // ASSIST_CORE_RNG_HPP_
