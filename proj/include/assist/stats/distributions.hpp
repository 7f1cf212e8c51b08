#ifndef ASSIST_STATS_DISTRIBUTIONS_HPP_
#define ASSIST_STATS_DISTRIBUTIONS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <json.hpp>

#include "assist/core/error.hpp"

namespace assist::stats {

// Upper tail of the chi-square distribution. df = 1 uses erfc directly.
inline double chi2_sf(double x, int df = 1) {
  require(x >= 0.0, "chi2_sf requires x >= 0");
  require(df >= 1, "chi2_sf requires df >= 1");
  if (df == 1) return std::erfc(std::sqrt(x / 2.0));
  return boost::math::gamma_q(df / 2.0, x / 2.0);
}

// Two-sided critical value: P(|Z| <= z) = conf.
inline double normal_critical(double conf) {
  require(conf > 0.0 && conf < 1.0, "confidence level must be in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + conf / 2.0);
}

struct WilsonInterval {
  std::int64_t successes = 0;
  std::int64_t trials = 0;
  double confidence = 0.95;
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(WilsonInterval, successes, trials, confidence, estimate, lower,
                                   upper)

inline WilsonInterval wilson_interval(std::int64_t successes, std::int64_t trials,
                                      double conf = 0.95) {
  require(trials >= 1, "wilson interval needs at least one trial");
  require(successes >= 0 && successes <= trials, "successes must lie in [0, trials]");
  const double n = static_cast<double>(trials);
  const double p = successes / n;
  const double z = normal_critical(conf);
  const double z2 = z * z;
  const double centre = p + z2 / (2.0 * n);
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  const double denom = 1.0 + z2 / n;
  WilsonInterval w{successes, trials, conf, p, (centre - half) / denom, (centre + half) / denom};
  // Rounding can push an endpoint a few ulps past the estimate at p = 0 or 1.
  w.lower = std::clamp(w.lower, 0.0, p);
  w.upper = std::clamp(w.upper, p, 1.0);
  return w;
}

}  // namespace assist::stats

#endif  // ASSIST_STATS_DISTRIBUTIONS_HPP_
