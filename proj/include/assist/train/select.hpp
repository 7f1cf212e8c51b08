#ifndef ASSIST_TRAIN_SELECT_HPP_
#define ASSIST_TRAIN_SELECT_HPP_

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "assist/core/error.hpp"
#include "assist/core/image.hpp"
#include "assist/infer/aggregate.hpp"
#include "assist/nn/checkpoint.hpp"
#include "assist/train/dataset.hpp"
#include "assist/train/hyperparams.hpp"

namespace assist::train {

struct TrialResult {
  int index = 0;
  Hyperparams hyperparams;
  std::string checkpoint;  // path relative to the search directory
  std::string checkpoint_id;
  bool failed = false;
  std::string failure;
  double final_loss = 0.0;
  std::vector<double> losses;  // windowed means of the loss trace
  double tune_accuracy = 0.0;
  std::optional<double> validation_accuracy;  // finalists only
};

inline void to_json(nlohmann::json& j, const TrialResult& t) {
  j = {{"index", t.index},
       {"hyperparams", t.hyperparams},
       {"checkpoint", t.checkpoint},
       {"checkpoint_id", t.checkpoint_id},
       {"failed", t.failed},
       {"failure", t.failure},
       {"final_loss", t.final_loss},
       {"losses", t.losses},
       {"tune_accuracy", t.tune_accuracy},
       {"validation_accuracy", t.validation_accuracy ? nlohmann::json(*t.validation_accuracy)
                                                     : nlohmann::json(nullptr)}};
}

inline void from_json(const nlohmann::json& j, TrialResult& t) {
  t.index = j.at("index").get<int>();
  t.hyperparams = j.at("hyperparams").get<Hyperparams>();
  t.checkpoint = j.value("checkpoint", "");
  t.checkpoint_id = j.value("checkpoint_id", "");
  t.failed = j.value("failed", false);
  t.failure = j.value("failure", "");
  t.final_loss = j.value("final_loss", 0.0);
  t.losses = j.value("losses", std::vector<double>{});
  t.tune_accuracy = j.value("tune_accuracy", 0.0);
  if (j.contains("validation_accuracy") && !j["validation_accuracy"].is_null())
    t.validation_accuracy = j["validation_accuracy"].get<double>();
  else
    t.validation_accuracy.reset();
}

struct AuditEntry {
  std::uint64_t sequence = 0;
  int trial = 0;
  std::string split;
  double accuracy = 0.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AuditEntry, sequence, trial, split, accuracy)

// Every evaluation of a trial on a held-out split goes through here, so the
// log proves which trials ever saw the validation set.
class AuditLog {
 public:
  void record(int trial, const std::string& split, double accuracy) {
    std::lock_guard lock(mu_);
    entries_.push_back({entries_.size(), trial, split, accuracy});
  }

  std::vector<AuditEntry> entries() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

  std::vector<int> trials_on(const std::string& split) const {
    std::vector<int> out;
    for (const auto& e : entries())
      if (e.split == split) out.push_back(e.trial);
    return out;
  }

  std::string jsonl() const {
    std::ostringstream os;
    for (const auto& e : entries()) os << nlohmann::json(e).dump() << '\n';
    return os.str();
  }

 private:
  mutable std::mutex mu_;
  std::vector<AuditEntry> entries_;
};

using Evaluator = std::function<double(const TrialResult&)>;

struct Selection {
  int winner = -1;
  std::vector<int> finalists;  // in tune-rank order
  std::vector<TrialResult> trials;

  const TrialResult& winning_trial() const {
    for (const auto& t : trials)
      if (t.index == winner) return t;
    throw PreconditionError("selection has no winner");
  }
};

// Rank successful trials by tune accuracy (descending, lower index on ties),
// evaluate only the top `finalists` on validation, return the
// validation-best (lower index on ties).
inline Selection select_trial(std::vector<TrialResult> trials, int finalists,
                              const Evaluator& validate, AuditLog& audit) {
  require(finalists >= 1, "finalist count must be positive");
  std::vector<std::size_t> ranked;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    trials[i].validation_accuracy.reset();
    if (!trials[i].failed) ranked.push_back(i);
  }
  if (ranked.empty()) throw PreconditionError("all trials failed; nothing to select");
  std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
    if (trials[a].tune_accuracy != trials[b].tune_accuracy)
      return trials[a].tune_accuracy > trials[b].tune_accuracy;
    return trials[a].index < trials[b].index;
  });
  ranked.resize(std::min(ranked.size(), static_cast<std::size_t>(finalists)));

  Selection sel;
  const TrialResult* best = nullptr;
  for (std::size_t i : ranked) {
    auto& t = trials[i];
    const double acc = validate(t);
    require(acc >= 0.0 && acc <= 1.0, "validation accuracy outside [0, 1]");
    audit.record(t.index, "validation", acc);
    t.validation_accuracy = acc;
    sel.finalists.push_back(t.index);
    if (!best || acc > *best->validation_accuracy ||
        (acc == *best->validation_accuracy && t.index < best->index))
      best = &t;
  }
  sel.winner = best->index;
  sel.trials = std::move(trials);
  return sel;
}

// Loads a trial's checkpoint and scores it on the validation slides.
inline Evaluator validation_evaluator(const std::filesystem::path& search_dir,
                                      const std::vector<SlidePatches>& slides,
                                      std::vector<infer::Evaluation>* details = nullptr) {
  return [search_dir, &slides, details](const TrialResult& t) {
    const auto ck = nn::load_checkpoint(search_dir / t.checkpoint);
    const auto ev = infer::evaluate_slides(ck, normalized_slides(slides, ck.norm));
    if (details) details->push_back(ev);
    return ev.accuracy;
  };
}

}  // namespace assist::train

#endif  // ASSIST_TRAIN_SELECT_HPP_
