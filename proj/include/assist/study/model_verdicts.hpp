#ifndef ASSIST_STUDY_MODEL_VERDICTS_HPP_
#define ASSIST_STUDY_MODEL_VERDICTS_HPP_

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "assist/core/rng.hpp"
#include "assist/infer/aggregate.hpp"
#include "assist/infer/predict.hpp"
#include "assist/nn/checkpoint.hpp"
#include "assist/patch/catalog.hpp"
#include "assist/patch/pipeline.hpp"
#include "assist/study/simulate.hpp"

namespace assist::study {

// Verdicts from a trained checkpoint: each reader "selects" a few patches
// from the slide's tumour region (a per-reader random draw), which go through
// the same prepare/predict path as the service and are averaged into a slide
// verdict.
inline VerdictFn checkpoint_verdicts(std::shared_ptr<const nn::Checkpoint> ck,
                                     std::filesystem::path catalog_dir, patch::Catalog catalog,
                                     int patches_per_read, std::uint64_t seed) {
  require(ck != nullptr, "checkpoint is required");
  require(patches_per_read >= 1, "at least one patch per read is required");
  auto cache = std::make_shared<std::map<std::string, patch::SlideImage>>();
  return [=](const Reader& reader, const DesignSlide& s) {
    auto it = cache->find(s.id);
    if (it == cache->end())
      it = cache->emplace(s.id, patch::load_slide(catalog_dir, catalog.find(s.id))).first;
    const auto reader_seed = CounterRng::stream(seed, "reader-patches", hash_string(reader.id)).next_u64();
    const auto patches = patch::sample_patches(it->second, patches_per_read,
                                               ck->model.config.input_size, reader_seed);
    std::vector<infer::NormalizedPatch> prepared;
    for (const auto& p : patches) prepared.push_back(infer::prepare_patch(*ck, p.pixels));
    std::vector<double> hcc;
    for (const auto& pr : infer::predict_patches(*ck, prepared)) hcc.push_back(pr.hcc);
    return infer::aggregate_slide(hcc, infer::kSlideThreshold, s.id).label;
  };
}

}  // namespace assist::study

#endif  // ASSIST_STUDY_MODEL_VERDICTS_HPP_
