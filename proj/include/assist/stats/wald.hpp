#ifndef ASSIST_STATS_WALD_HPP_
#define ASSIST_STATS_WALD_HPP_

#include <cmath>
#include <string>

#include <json.hpp>

#include "assist/core/error.hpp"
#include "assist/stats/distributions.hpp"
#include "assist/stats/glmm.hpp"

namespace assist::stats {

inline constexpr double kWaldZ = 1.96;

struct WaldResult {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
  double statistic = 0.0;
  double p_value = 1.0;
  double odds_ratio = 1.0;
  double ci_lower = 1.0;
  double ci_upper = 1.0;
  bool unreliable = false;
  std::string note;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(WaldResult, name, estimate, se, statistic, p_value, odds_ratio,
                                   ci_lower, ci_upper, unreliable, note)

inline WaldResult wald(const std::string& name, double estimate, double se) {
  require(std::isfinite(estimate), "coefficient is not finite");
  require(se > 0.0 && std::isfinite(se), "standard error must be positive and finite");
  WaldResult w;
  w.name = name;
  w.estimate = estimate;
  w.se = se;
  w.statistic = (estimate / se) * (estimate / se);
  w.p_value = chi2_sf(w.statistic, 1);
  w.odds_ratio = std::exp(estimate);
  w.ci_lower = std::exp(estimate - kWaldZ * se);
  w.ci_upper = std::exp(estimate + kWaldZ * se);
  return w;
}

// Wald chi-square test of one fixed effect. Boundary or non-converged fits
// still produce numbers but are flagged unreliable.
inline WaldResult wald_test(const GlmmFit& fit, const std::string& coefficient) {
  const auto k = fit.index_of(coefficient);
  auto w = wald(coefficient, fit.beta[k], fit.se[k]);
  if (!fit.converged) {
    w.unreliable = true;
    w.note = "fit did not converge";
  } else if (fit.boundary) {
    w.unreliable = true;
    w.note = "variance component on the boundary";
  }
  return w;
}

}  // namespace assist::stats

#endif  // ASSIST_STATS_WALD_HPP_
