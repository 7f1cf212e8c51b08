#ifndef ASSIST_TRAIN_TRAINER_HPP_
#define ASSIST_TRAIN_TRAINER_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "assist/core/error.hpp"
#include "assist/core/rng.hpp"
#include "assist/infer/predict.hpp"
#include "assist/nn/checkpoint.hpp"
#include "assist/nn/network.hpp"
#include "assist/nn/optimizer.hpp"
#include "assist/patch/pipeline.hpp"
#include "assist/train/dataset.hpp"
#include "assist/train/hyperparams.hpp"

namespace assist::train {

struct TrialOutcome {
  bool failed = false;
  std::string failure;
  nn::Checkpoint checkpoint;
};

using ProgressFn = std::function<void(std::int64_t iteration, double loss)>;

// Minibatch SGD with momentum and step decay. Each epoch visits the training
// patches in a fresh permutation; every sampled patch gets a random dihedral
// transform. A non-finite loss or weight marks the trial failed.
inline TrialOutcome train_trial(const nn::NetworkConfig& cfg, const Hyperparams& hp,
                                const LabeledPatches& data, const patch::NormStats& norm,
                                const ProgressFn& progress = {}) {
  require(hp.iterations >= 1, "iteration budget must be at least 1");
  require(hp.batch_size >= 1, "batch size must be positive");
  require(hp.learning_rate > 0.0 && std::isfinite(hp.learning_rate), "learning rate must be positive");
  require(data.size() > 0 && data.labels.size() == data.size(), "training set is empty or unlabeled");
  require(norm.valid(), "invalid normalization stats");
  const auto side = static_cast<std::size_t>(cfg.input_size);
  for (const auto& img : data.images)
    require(std::size_t(img.width) == side && std::size_t(img.height) == side,
            "training patch size differs from network input");

  TrialOutcome out;
  auto& ck = out.checkpoint;
  ck.model = nn::init_model<float>(cfg, hp.seed);
  ck.norm = norm;
  ck.hyperparams = hp;
  ck.loss_trace.reserve(static_cast<std::size_t>(hp.iterations));
  auto opt = nn::OptimizerState<float>::for_params(ck.model.params, hp.learning_rate, hp.momentum,
                                                   hp.decay_every, hp.decay_factor);

  std::vector<std::size_t> order(data.size());
  std::size_t pos = order.size();
  std::uint64_t epoch = 0;
  auto aug_rng = CounterRng::stream(hp.seed, "augment");
  const auto bs = static_cast<std::size_t>(hp.batch_size);
  const std::size_t sample = 3 * side * side;
  nn::Tensor<float> batch({bs, 3, side, side});
  std::vector<int> labels(bs);

  for (std::int64_t it = 0; it < hp.iterations; ++it) {
    for (std::size_t j = 0; j < bs; ++j) {
      if (pos == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto rng = CounterRng::stream(hp.seed, "epoch", epoch++);
        rng.shuffle(std::span<std::size_t>(order));
        pos = 0;
      }
      const std::size_t idx = order[pos++];
      const int t = static_cast<int>(aug_rng.uniform_int(patch::kDihedralCount));
      const auto x = patch::normalize(patch::augment(data.images[idx], t), norm);
      std::copy(x.values().begin(), x.values().end(), batch.data() + j * sample);
      labels[j] = data.labels[idx];
    }
    try {
      auto lg = nn::loss_and_grad(ck.model, batch, labels);
      if (!std::isfinite(lg.loss)) throw NumericError("non-finite loss");
      nn::sgd_step(ck.model.params, lg.grads, opt);
      nn::update_running_stats(ck.model, lg.bn_stats);
      ck.loss_trace.push_back(lg.loss);
      if (progress) progress(it, lg.loss);
    } catch (const NumericError& e) {
      out.failed = true;
      out.failure = "diverged at iteration " + std::to_string(it) + ": " + e.what();
      return out;
    }
  }
  for (const auto& b : ck.model.buffers)
    if (!b.all_finite()) {
      out.failed = true;
      out.failure = "non-finite batch-norm statistics after training";
    }
  return out;
}

// Fraction of patches whose thresholded P(HCC) matches the label.
inline double patch_accuracy(const nn::Checkpoint& ck, const LabeledPatches& data) {
  require(data.size() > 0, "accuracy needs at least one patch");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += infer::kPredictBatch) {
    const std::size_t end = std::min(data.size(), start + infer::kPredictBatch);
    std::vector<infer::NormalizedPatch> chunk;
    chunk.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) chunk.push_back(infer::prepare_patch(ck, data.images[i]));
    const auto probs = infer::predict_patches(ck, chunk);
    for (std::size_t i = start; i < end; ++i)
      correct += patch::label_index(probs[i - start].label()) == data.labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace assist::train

#endif  // ASSIST_TRAIN_TRAINER_HPP_
