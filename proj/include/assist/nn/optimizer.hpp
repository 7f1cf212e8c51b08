#ifndef ASSIST_NN_OPTIMIZER_HPP_
#define ASSIST_NN_OPTIMIZER_HPP_

#include <cmath>
#include <cstdint>
#include <vector>

#include "assist/core/error.hpp"
#include "assist/nn/tensor.hpp"

namespace assist::nn {

// SGD with classical momentum and a step learning-rate schedule.
template <typename S>
struct OptimizerState {
  std::vector<Tensor<S>> velocity;
  double momentum = 0.9;
  double base_lr = 1e-4;
  double decay_factor = 0.1;
  std::int64_t decay_every = 20000;
  std::int64_t iteration = 0;

  static OptimizerState for_params(const std::vector<Tensor<S>>& params, double base_lr,
                                   double momentum = 0.9, std::int64_t decay_every = 20000,
                                   double decay_factor = 0.1) {
    OptimizerState st;
    for (const auto& p : params) st.velocity.emplace_back(p.shape());
    st.base_lr = base_lr;
    st.momentum = momentum;
    st.decay_every = decay_every;
    st.decay_factor = decay_factor;
    return st;
  }
};

// base_lr * decay_factor ^ floor(iteration / decay_every)
template <typename S>
double lr_at(const OptimizerState<S>& state, std::int64_t iteration) {
  require(iteration >= 0, "iteration must be non-negative");
  require(state.decay_every > 0, "decay period must be positive");
  const auto steps = iteration / state.decay_every;
  return state.base_lr * std::pow(state.decay_factor, static_cast<double>(steps));
}

// v <- momentum * v + g;  w <- w - lr(iteration) * v;  ++iteration.
// Nothing is modified when a gradient is non-finite.
template <typename S>
void sgd_step(std::vector<Tensor<S>>& weights, const std::vector<Tensor<S>>& grads,
              OptimizerState<S>& state) {
  require(weights.size() == grads.size() && weights.size() == state.velocity.size(),
          "weights, gradients and velocity must have one tensor per parameter");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    require(weights[i].shape() == grads[i].shape() && weights[i].shape() == state.velocity[i].shape(),
            "gradient shape does not mirror parameter shape");
    if (!grads[i].all_finite()) throw NumericError("non-finite gradient");
  }
  const double lr = lr_at(state, state.iteration);
  const double mu = state.momentum;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    auto& w = weights[i];
    auto& v = state.velocity[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = static_cast<S>(mu * v[j] + g[j]);
      w[j] = static_cast<S>(w[j] - lr * v[j]);
    }
  }
  ++state.iteration;
}

}  // namespace assist::nn

#endif  // ASSIST_NN_OPTIMIZER_HPP_
