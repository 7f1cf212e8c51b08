#ifndef ASSIST_TRAIN_DATASET_HPP_
#define ASSIST_TRAIN_DATASET_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "assist/core/error.hpp"
#include "assist/core/rng.hpp"
#include "assist/infer/aggregate.hpp"
#include "assist/patch/catalog.hpp"
#include "assist/patch/pipeline.hpp"
#include "assist/train/profile.hpp"

namespace assist::train {

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
  return CounterRng::stream(seed, tag, index).next_u64();
}

// Raw 8-bit patches with class labels; normalization and augmentation happen
// per minibatch.
struct LabeledPatches {
  std::vector<RgbImage> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
};

struct SlidePatches {
  std::string slide_id;
  patch::Label truth = patch::Label::CC;
  std::vector<RgbImage> images;
};

struct PatchSets {
  LabeledPatches train;
  LabeledPatches tune;
  std::vector<SlidePatches> validation;
  patch::NormStats norm;
};

inline std::vector<SlidePatches> sample_split(const std::filesystem::path& dir,
                                              const patch::Catalog& catalog, patch::Split split,
                                              int per_slide, int side, std::uint64_t seed) {
  std::vector<SlidePatches> out;
  for (const auto* rec : catalog.in_split(split)) {
    const auto slide = patch::load_slide(dir, *rec);
    SlidePatches sp{rec->id, rec->label, {}};
    for (auto& p : patch::sample_patches(slide, per_slide, side, seed))
      sp.images.push_back(std::move(p.pixels));
    out.push_back(std::move(sp));
  }
  require(!out.empty(), "catalog has no slides in the requested split");
  return out;
}

inline LabeledPatches flatten(std::vector<SlidePatches> slides) {
  LabeledPatches out;
  for (auto& s : slides)
    for (auto& img : s.images) {
      out.images.push_back(std::move(img));
      out.labels.push_back(patch::label_index(s.truth));
    }
  return out;
}

// Normalization statistics come from the training patches only.
inline PatchSets build_patch_sets(const std::filesystem::path& catalog_dir,
                                  const patch::Catalog& catalog, const Profile& profile,
                                  std::uint64_t seed) {
  PatchSets sets;
  const int side = profile.patch_side;
  sets.train = flatten(sample_split(catalog_dir, catalog, patch::Split::train,
                                    profile.train_patches_per_slide, side,
                                    derive_seed(seed, "train-patches")));
  sets.tune = flatten(sample_split(catalog_dir, catalog, patch::Split::tune,
                                   profile.tune_patches_per_slide, side,
                                   derive_seed(seed, "tune-patches")));
  sets.validation = sample_split(catalog_dir, catalog, patch::Split::validation,
                                 profile.validation_patches_per_slide, side,
                                 derive_seed(seed, "validation-patches"));
  patch::ChannelMoments moments;
  for (const auto& img : sets.train.images) moments.add(img);
  sets.norm = moments.finish();
  return sets;
}

inline std::vector<infer::LabeledSlide> normalized_slides(std::span<const SlidePatches> slides,
                                                          const patch::NormStats& norm) {
  std::vector<infer::LabeledSlide> out;
  for (const auto& s : slides) {
    infer::LabeledSlide ls{s.slide_id, s.truth, {}};
    for (const auto& img : s.images) ls.patches.emplace_back(img, norm);
    out.push_back(std::move(ls));
  }
  return out;
}

}  // namespace assist::train

#endif  // ASSIST_TRAIN_DATASET_HPP_
