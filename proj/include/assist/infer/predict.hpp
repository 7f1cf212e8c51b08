#ifndef ASSIST_INFER_PREDICT_HPP_
#define ASSIST_INFER_PREDICT_HPP_

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "assist/cam/cam.hpp"
#include "assist/core/error.hpp"
#include "assist/core/image.hpp"
#include "assist/nn/checkpoint.hpp"
#include "assist/nn/network.hpp"
#include "assist/patch/pipeline.hpp"

namespace assist::infer {

using nn::Tensor;

struct Probabilities {
  double cc = 0.5;
  double hcc = 0.5;

  patch::Label label(double threshold = 0.5) const {
    return hcc > threshold ? patch::Label::HCC : patch::Label::CC;
  }
  double of(patch::Label l) const { return l == patch::Label::HCC ? hcc : cc; }
  bool operator==(const Probabilities&) const = default;
};

// A (3, S, S) tensor that remembers which statistics normalized it, so a
// prediction can refuse inputs prepared for a different checkpoint.
class NormalizedPatch {
 public:
  NormalizedPatch(const RgbImage& img, const patch::NormStats& stats)
      : tensor_(patch::normalize(img, stats)), stats_(stats) {}
  NormalizedPatch(const Tensor<float>& planar, const patch::NormStats& stats)
      : tensor_(patch::normalize(planar, stats)), stats_(stats) {}

  const Tensor<float>& tensor() const { return tensor_; }
  const patch::NormStats& stats() const { return stats_; }
  std::size_t side() const { return tensor_.dim(1); }

 private:
  Tensor<float> tensor_;
  patch::NormStats stats_;
};

// Resizes (bilinear) to the network input when needed, then normalizes with
// the checkpoint statistics.
inline NormalizedPatch prepare_patch(const nn::Checkpoint& ck, const RgbImage& img) {
  const int side = ck.model.config.input_size;
  if (img.width == side && img.height == side) return NormalizedPatch(img, ck.norm);
  return NormalizedPatch(resize_bilinear(img, side, side), ck.norm);
}

namespace detail {

inline void check_patch(const nn::Checkpoint& ck, const NormalizedPatch& p) {
  if (!(p.stats() == ck.norm))
    throw PreconditionError("patch was not normalized with the checkpoint's statistics");
  const auto side = static_cast<std::size_t>(ck.model.config.input_size);
  if (p.tensor().dim(1) != side || p.tensor().dim(2) != side)
    throw PreconditionError("patch is " + std::to_string(p.tensor().dim(2)) + "x" +
                            std::to_string(p.tensor().dim(1)) + ", network expects " +
                            std::to_string(side) + "x" + std::to_string(side));
}

inline Tensor<float> stack(std::span<const NormalizedPatch> patches) {
  const auto& first = patches.front().tensor();
  Tensor<float> batch({patches.size(), first.dim(0), first.dim(1), first.dim(2)});
  for (std::size_t i = 0; i < patches.size(); ++i)
    std::copy(patches[i].tensor().values().begin(), patches[i].tensor().values().end(),
              batch.data() + i * first.size());
  return batch;
}

inline Probabilities softmax2(float logit_cc, float logit_hcc) {
  const double a = logit_cc, b = logit_hcc, m = std::max(a, b);
  const double ea = std::exp(a - m), eb = std::exp(b - m);
  return {ea / (ea + eb), eb / (ea + eb)};
}

}  // namespace detail

inline constexpr std::size_t kPredictBatch = 32;

// Eval-mode probabilities for each patch; batched internally.
inline std::vector<Probabilities> predict_patches(const nn::Checkpoint& ck,
                                                  std::span<const NormalizedPatch> patches) {
  std::vector<Probabilities> out;
  out.reserve(patches.size());
  for (const auto& p : patches) detail::check_patch(ck, p);
  for (std::size_t start = 0; start < patches.size(); start += kPredictBatch) {
    const auto chunk = patches.subspan(start, std::min(kPredictBatch, patches.size() - start));
    const auto fwd = nn::forward(ck.model, detail::stack(chunk), nn::Mode::eval);
    for (std::size_t i = 0; i < chunk.size(); ++i)
      out.push_back(detail::softmax2(fwd.logits[i * 2 + nn::kLabelCC],
                                     fwd.logits[i * 2 + nn::kLabelHCC]));
  }
  return out;
}

inline Probabilities predict_patch(const nn::Checkpoint& ck, const NormalizedPatch& patch) {
  return predict_patches(ck, std::span(&patch, 1)).front();
}

struct PatchExplanation {
  Probabilities probabilities;
  cam::CamHeatmap hcc;
  cam::CamHeatmap cc;
};

// One forward pass yields both the probabilities and the per-class CAMs.
inline PatchExplanation explain_patch(const nn::Checkpoint& ck, const NormalizedPatch& patch) {
  detail::check_patch(ck, patch);
  const auto fwd = nn::forward(ck.model, detail::stack(std::span(&patch, 1)), nn::Mode::eval);
  PatchExplanation e;
  e.probabilities = detail::softmax2(fwd.logits[nn::kLabelCC], fwd.logits[nn::kLabelHCC]);
  const auto& f = fwd.features;
  const auto features = f.reshaped({f.dim(1), f.dim(2), f.dim(3)});
  const std::size_t side = patch.side();
  const auto& w = ck.model.head_weight();
  e.hcc = cam::make_heatmap(features, w, patch::Label::HCC, e.probabilities.hcc, side, side);
  e.cc = cam::make_heatmap(features, w, patch::Label::CC, e.probabilities.cc, side, side);
  return e;
}

}  // namespace assist::infer

#endif  // ASSIST_INFER_PREDICT_HPP_
