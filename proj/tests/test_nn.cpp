#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "assist/core/rng.hpp"
#include "assist/nn/checkpoint.hpp"
#include "assist/nn/layers.hpp"
#include "assist/nn/network.hpp"
#include "assist/nn/optimizer.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace assist;
using nn::Tensor;

TEST(Conv, MatchesDirectSumOracle) {
  auto rng = CounterRng::stream(1, "conv");
  struct Case {
    int n, c, h, w, o, k, stride, pad;
  };
  const Case cases[] = {{2, 3, 7, 7, 4, 3, 1, 1}, {1, 2, 8, 6, 3, 3, 2, 1}, {2, 4, 5, 5, 2, 1, 1, 0},
                        {1, 3, 9, 9, 2, 7, 2, 3}, {3, 1, 4, 4, 1, 3, 1, 0}};
  for (const auto& cs : cases) {
    Tensor<double> x({std::size_t(cs.n), std::size_t(cs.c), std::size_t(cs.h), std::size_t(cs.w)});
    Tensor<double> wt({std::size_t(cs.o), std::size_t(cs.c), std::size_t(cs.k), std::size_t(cs.k)});
    for (auto& v : x.values()) v = rng.normal();
    for (auto& v : wt.values()) v = rng.normal();
    int oh = 0, ow = 0;
    const auto ref = oracle::naive_conv(x.values(), cs.n, cs.c, cs.h, cs.w, wt.values(), cs.o, cs.k,
                                        cs.stride, cs.pad, oh, ow);
    const auto y = nn::ops::conv_forward(x, wt, cs.stride, cs.pad);
    ASSERT_EQ(y.dim(2), std::size_t(oh));
    ASSERT_EQ(y.dim(3), std::size_t(ow));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Network, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto r = gradcheck::run(seed);
    EXPECT_LE(r.params, 5000u);
    EXPECT_EQ(r.checked, r.params);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(Network, ToyConfigIsSmall) {
  const auto m = nn::init_model<float>(nn::NetworkConfig::toy(), 1);
  EXPECT_LE(m.parameter_count(), 5000u);
}

TEST(Network, FeatureMapShapeMatchesConfig) {
  const auto cfg = nn::NetworkConfig::desk();
  const auto m = nn::init_model<float>(cfg, 1);
  Tensor<float> x({2, 3, 64, 64}, 0.1f);
  const auto out = nn::forward(m, x, nn::Mode::eval);
  EXPECT_EQ(out.logits.shape(), (nn::Shape{2, 2}));
  EXPECT_EQ(out.features.dim(1), std::size_t(cfg.feature_channels()));
  EXPECT_EQ(out.features.dim(2), std::size_t(cfg.feature_extent()));
  EXPECT_EQ(out.features.dim(3), std::size_t(cfg.feature_extent()));
}

TEST(Network, EvalModeIsPerExample) {
  const auto cfg = nn::NetworkConfig::toy();
  auto m = nn::init_model<float>(cfg, 4);
  auto rng = CounterRng::stream(4, "x");
  Tensor<float> batch({3, 3, 8, 8});
  for (auto& v : batch.values()) v = static_cast<float>(rng.normal());
  const auto all = nn::forward(m, batch, nn::Mode::eval).logits;
  for (std::size_t i = 0; i < 3; ++i) {
    Tensor<float> one({1, 3, 8, 8});
    std::copy_n(batch.data() + i * 192, 192, one.data());
    const auto single = nn::forward(m, one, nn::Mode::eval).logits;
    EXPECT_NEAR(single[0], all[i * 2], 1e-5);
    EXPECT_NEAR(single[1], all[i * 2 + 1], 1e-5);
  }
}

TEST(Network, RejectsWrongInputShape) {
  const auto m = nn::init_model<float>(nn::NetworkConfig::toy(), 1);
  Tensor<float> x({1, 3, 9, 9});
  EXPECT_THROW(nn::forward(m, x, nn::Mode::eval), PreconditionError);
}

TEST(Network, HeadIsGlobalAverageThenLinear) {
  // logit_c = mean over positions of (w_c . f) + b_c
  auto m = nn::init_model<double>(nn::NetworkConfig::toy(), 6);
  auto rng = CounterRng::stream(6, "x");
  for (auto& v : m.params[m.layout.plan.fc_bias].values()) v = rng.normal();
  Tensor<double> x({2, 3, 8, 8});
  for (auto& v : x.values()) v = rng.normal();
  const auto out = nn::forward(m, x, nn::Mode::eval);
  const auto& f = out.features;
  const std::size_t k = f.dim(1), plane = f.dim(2) * f.dim(3);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 2; ++c) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < k; ++ch)
        for (std::size_t i = 0; i < plane; ++i)
          acc += m.head_weight()[c * k + ch] * f[(n * k + ch) * plane + i];
      EXPECT_NEAR(out.logits[n * 2 + c], acc / double(plane) + m.head_bias()[c], 1e-10);
    }
}

TEST(Optimizer, MomentumStepMatchesHandComputation) {
  std::vector<Tensor<double>> w{Tensor<double>({2}, std::vector<double>{1.0, -2.0})};
  std::vector<Tensor<double>> g{Tensor<double>({2}, std::vector<double>{0.5, 0.25})};
  auto st = nn::OptimizerState<double>::for_params(w, 0.1, 0.9);
  nn::sgd_step(w, g, st);
  EXPECT_DOUBLE_EQ(w[0][0], 1.0 - 0.1 * 0.5);
  EXPECT_DOUBLE_EQ(w[0][1], -2.0 - 0.1 * 0.25);
  nn::sgd_step(w, g, st);
  // v = 0.9 * 0.5 + 0.5 = 0.95
  EXPECT_DOUBLE_EQ(w[0][0], 1.0 - 0.05 - 0.1 * 0.95);
}

TEST(Optimizer, StepScheduleDecaysEveryPeriod) {
  nn::OptimizerState<float> st;
  st.base_lr = 1e-2;
  st.decay_every = 20000;
  st.decay_factor = 0.1;
  EXPECT_DOUBLE_EQ(nn::lr_at(st, 0), 1e-2);
  EXPECT_DOUBLE_EQ(nn::lr_at(st, 19999), 1e-2);
  EXPECT_NEAR(nn::lr_at(st, 20000), 1e-3, 1e-15);
  EXPECT_NEAR(nn::lr_at(st, 59999), 1e-4, 1e-15);
}

TEST(Optimizer, NonFiniteGradientLeavesWeightsUntouched) {
  std::vector<Tensor<double>> w{Tensor<double>({2}, std::vector<double>{1.0, 2.0})};
  std::vector<Tensor<double>> g{Tensor<double>({2}, std::vector<double>{NAN, 0.0})};
  auto st = nn::OptimizerState<double>::for_params(w, 0.1);
  EXPECT_THROW(nn::sgd_step(w, g, st), NumericError);
  EXPECT_EQ(w[0][0], 1.0);
  EXPECT_EQ(st.iteration, 0);
}

TEST(Training, LossDecreasesOnSeparableBatch) {
  auto m = nn::init_model<float>(nn::NetworkConfig::toy(), 2);
  Tensor<float> x({4, 3, 8, 8});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 192; ++j) x[i * 192 + j] = (i % 2) ? 1.0f : -1.0f;
  const std::vector<int> y{0, 1, 0, 1};
  auto st = nn::OptimizerState<float>::for_params(m.params, 0.05);
  const double first = nn::loss_and_grad(m, x, y).loss;
  double last = first;
  for (int i = 0; i < 60; ++i) {
    auto lg = nn::loss_and_grad(m, x, y);
    nn::sgd_step(m.params, lg.grads, st);
    nn::update_running_stats(m, lg.bn_stats);
    last = lg.loss;
  }
  EXPECT_LT(last, 0.5 * first);
}

nn::Checkpoint sample_checkpoint() {
  nn::Checkpoint ck;
  ck.model = nn::init_model<float>(nn::NetworkConfig::toy(), 9);
  ck.norm = {{0.1, 0.2, 0.3}, {0.4, 0.5, 0.6}};
  ck.hyperparams.learning_rate = 3e-3;
  ck.hyperparams.seed = 77;
  ck.loss_trace = {0.7, 0.6, 0.5};
  ck.metadata["trial"] = 4;
  return ck;
}

TEST(Checkpoint, RoundTripPreservesEverything) {
  const auto ck = sample_checkpoint();
  const auto back = nn::deserialize(nn::serialize(ck));
  EXPECT_EQ(back.model.config.input_size, ck.model.config.input_size);
  EXPECT_EQ(back.model.params, ck.model.params);
  EXPECT_EQ(back.model.buffers, ck.model.buffers);
  EXPECT_EQ(back.norm, ck.norm);
  EXPECT_EQ(back.hyperparams, ck.hyperparams);
  EXPECT_EQ(back.loss_trace, ck.loss_trace);
  EXPECT_EQ(back.metadata, ck.metadata);
  EXPECT_EQ(nn::checkpoint_id(back), nn::checkpoint_id(ck));
}

TEST(Checkpoint, SerializationIsDeterministic) {
  EXPECT_EQ(nn::serialize(sample_checkpoint()), nn::serialize(sample_checkpoint()));
}

TEST(Checkpoint, CorruptionIsDetected) {
  auto bytes = nn::serialize(sample_checkpoint());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(nn::deserialize(bad_magic), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 4);
  EXPECT_THROW(nn::deserialize(truncated), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(nn::deserialize(trailing), FormatError);
}
