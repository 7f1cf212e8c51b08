#ifndef ASSIST_INFER_AGGREGATE_HPP_
#define ASSIST_INFER_AGGREGATE_HPP_

#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "assist/core/error.hpp"
#include "assist/core/image.hpp"
#include "assist/infer/predict.hpp"
#include "assist/patch/slide.hpp"
#include "assist/stats/distributions.hpp"

namespace assist::infer {

inline constexpr double kSlideThreshold = 0.5;

struct SlideVerdict {
  std::string slide_id;
  double mean_hcc = 0.0;
  patch::Label label = patch::Label::CC;
  std::size_t patch_count = 0;
};

// Mean P(HCC) over the slide's patches; HCC iff mean > threshold, so an exact
// tie is CC.
inline SlideVerdict aggregate_slide(std::span<const double> hcc_probs,
                                    double threshold = kSlideThreshold,
                                    std::string slide_id = {}) {
  require(!hcc_probs.empty(), "cannot aggregate a slide with no patch probabilities");
  for (double p : hcc_probs) require(p >= 0.0 && p <= 1.0, "patch probability outside [0, 1]");
  SlideVerdict v;
  v.slide_id = std::move(slide_id);
  v.patch_count = hcc_probs.size();
  v.mean_hcc = std::accumulate(hcc_probs.begin(), hcc_probs.end(), 0.0) /
               static_cast<double>(hcc_probs.size());
  v.label = v.mean_hcc > threshold ? patch::Label::HCC : patch::Label::CC;
  return v;
}

struct LabeledSlide {
  std::string id;
  patch::Label truth = patch::Label::CC;
  std::vector<NormalizedPatch> patches;
};

struct EvaluatedSlide {
  SlideVerdict verdict;
  patch::Label truth = patch::Label::CC;
  bool correct() const { return verdict.label == truth; }
};

struct Evaluation {
  std::vector<EvaluatedSlide> slides;
  std::size_t correct = 0;
  double accuracy = 0.0;
  stats::WilsonInterval interval;
};

inline Evaluation summarize_verdicts(std::vector<EvaluatedSlide> slides) {
  require(!slides.empty(), "evaluation needs at least one slide");
  Evaluation e;
  e.slides = std::move(slides);
  for (const auto& s : e.slides) e.correct += s.correct() ? 1 : 0;
  e.accuracy = static_cast<double>(e.correct) / static_cast<double>(e.slides.size());
  e.interval = stats::wilson_interval(static_cast<std::int64_t>(e.correct),
                                      static_cast<std::int64_t>(e.slides.size()));
  return e;
}

inline Evaluation evaluate_slides(const nn::Checkpoint& ck, std::span<const LabeledSlide> slides,
                                  double threshold = kSlideThreshold) {
  std::vector<EvaluatedSlide> out;
  out.reserve(slides.size());
  for (const auto& s : slides) {
    require(!s.patches.empty(), "slide " + s.id + " has no patches");
    const auto probs = predict_patches(ck, s.patches);
    std::vector<double> hcc;
    hcc.reserve(probs.size());
    for (const auto& p : probs) hcc.push_back(p.hcc);
    out.push_back({aggregate_slide(hcc, threshold, s.id), s.truth});
  }
  return summarize_verdicts(std::move(out));
}

inline std::string evaluation_csv(const Evaluation& e) {
  std::ostringstream os;
  os << "slide_id,mean_prob_hcc,verdict,truth,patches\n";
  char buf[32];
  for (const auto& s : e.slides) {
    std::snprintf(buf, sizeof buf, "%.6f", s.verdict.mean_hcc);
    os << s.verdict.slide_id << ',' << buf << ',' << patch::label_name(s.verdict.label) << ','
       << patch::label_name(s.truth) << ',' << s.verdict.patch_count << '\n';
  }
  return os.str();
}

inline nlohmann::json evaluation_json(const Evaluation& e) {
  return {{"slides", e.slides.size()},
          {"correct", e.correct},
          {"accuracy", e.accuracy},
          {"ci95", {e.interval.lower, e.interval.upper}}};
}

inline void write_evaluation(const std::filesystem::path& dir, const std::string& stem,
                             const Evaluation& e) {
  std::filesystem::create_directories(dir);
  write_text(dir / (stem + ".csv"), evaluation_csv(e));
  write_text(dir / (stem + ".json"), evaluation_json(e).dump(2) + "\n");
}

}  // namespace assist::infer

#endif  // ASSIST_INFER_AGGREGATE_HPP_
