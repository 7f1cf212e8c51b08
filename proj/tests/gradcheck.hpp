// Finite-difference check of the network's analytic gradients.
#ifndef ASSIST_TESTS_GRADCHECK_HPP_
#define ASSIST_TESTS_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <vector>

#include "assist/core/rng.hpp"
#include "assist/nn/network.hpp"
#include "oracles.hpp"

namespace gradcheck {

struct Result {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t params = 0;
};

// Every parameter of a double-precision toy network, central differences with
// step h, relative error floored at `floor` to ignore near-zero gradients.
inline Result run(std::uint64_t seed, double h = 1e-6, double floor = 1e-6) {
  using namespace assist;
  const auto cfg = nn::NetworkConfig::toy();
  auto model = nn::init_model<double>(cfg, seed);
  // Non-trivial BN affine parameters so their gradients are exercised.
  auto rng = CounterRng::stream(seed, "gradcheck");
  for (std::size_t i = 0; i < model.params.size(); ++i)
    if (model.layout.params[i].name.ends_with(".beta") || model.layout.params[i].name.ends_with(".bias"))
      for (auto& v : model.params[i].values()) v = rng.normal(0.0, 0.1);
  const std::size_t n = 4, side = std::size_t(cfg.input_size);
  nn::Tensor<double> x({n, 3, side, side});
  for (auto& v : x.values()) v = rng.normal();
  const std::vector<int> labels{0, 1, 1, 0};

  const auto analytic = nn::loss_and_grad(model, x, labels);
  Result res;
  res.params = model.parameter_count();
  for (std::size_t p = 0; p < model.params.size(); ++p)
    for (std::size_t j = 0; j < model.params[p].size(); ++j) {
      const double orig = model.params[p][j];
      auto f = [&](double v) {
        model.params[p][j] = v;
        return nn::loss_and_grad(model, x, labels).loss;
      };
      const double numeric = oracle::central_difference(f, orig, h);
      model.params[p][j] = orig;
      res.max_rel_error = std::max(res.max_rel_error, oracle::relative_error(analytic.grads[p][j], numeric, floor));
      ++res.checked;
    }
  return res;
}

}  // namespace gradcheck

#endif  // ASSIST_TESTS_GRADCHECK_HPP_
