#ifndef ASSIST_TRAIN_PROFILE_HPP_
#define ASSIST_TRAIN_PROFILE_HPP_

#include <string>

#include <json.hpp>

#include "assist/core/error.hpp"
#include "assist/nn/config.hpp"
#include "assist/patch/pipeline.hpp"
#include "assist/patch/slide.hpp"
#include "assist/train/hyperparams.hpp"

namespace assist::train {

// Everything that scales between a laptop run and the full-size protocol.
struct Profile {
  std::string name = "desk";
  int patch_side = 64;
  int trials = 8;
  std::int64_t iterations = 2000;
  std::int64_t decay_every = 1000;
  LrRange lr_range = kDefaultLrRange;
  int finalists = 10;
  int train_patches_per_slide = 100;
  int tune_patches_per_slide = 20;
  int validation_patches_per_slide = 20;
  int study_patches_per_read = 3;
  patch::SplitCounts counts;
  patch::GeneratorParams generator;
  nn::NetworkConfig network = nn::NetworkConfig::desk();

  static Profile desk() { return {}; }

  static Profile paper() {
    Profile p;
    p.name = "paper";
    p.patch_side = 512;
    p.trials = 50;
    p.iterations = 60000;
    p.decay_every = 20000;
    p.train_patches_per_slide = 1000;
    p.tune_patches_per_slide = 100;
    p.validation_patches_per_slide = 100;
    p.generator.slide_size = 2048;
    p.network = nn::NetworkConfig::densenet121();
    return p;
  }

  static Profile named(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw PreconditionError("unknown profile '" + name + "' (expected desk or paper)");
  }

  void validate() const {
    require(patch_side > 0 && patch_side == network.input_size,
            "profile patch side must equal the network input size");
    require(patch_side < generator.slide_size, "patches must be smaller than slides");
    require(trials >= 1 && iterations >= 1 && decay_every >= 1, "profile budgets must be positive");
    require(finalists >= 1, "finalist count must be positive");
    require(train_patches_per_slide >= 1 && tune_patches_per_slide >= 1 &&
                validation_patches_per_slide >= 1 && study_patches_per_read >= 1,
            "patch counts must be positive");
    require(lr_range.lo > 0.0 && lr_range.lo <= lr_range.hi, "invalid learning-rate range");
    network.validate();
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Profile, name, patch_side, trials, iterations,
                                                decay_every, lr_range, finalists,
                                                train_patches_per_slide, tune_patches_per_slide,
                                                validation_patches_per_slide,
                                                study_patches_per_read, counts, generator, network)

}  // namespace assist::train

#endif  // ASSIST_TRAIN_PROFILE_HPP_
