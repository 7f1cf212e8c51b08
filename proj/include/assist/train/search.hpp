#ifndef ASSIST_TRAIN_SEARCH_HPP_
#define ASSIST_TRAIN_SEARCH_HPP_

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "assist/core/error.hpp"
#include "assist/core/image.hpp"
#include "assist/nn/checkpoint.hpp"
#include "assist/train/dataset.hpp"
#include "assist/train/profile.hpp"
#include "assist/train/select.hpp"
#include "assist/train/trainer.hpp"

namespace assist::train {

namespace fs = std::filesystem;

struct SearchOptions {
  Profile profile = Profile::desk();
  std::uint64_t seed = 0;
  int trials = 8;
  std::int64_t iterations = 2000;
  int jobs = 1;
  std::function<void(const TrialResult&)> on_trial;
};

struct SearchReport {
  nlohmann::json header;
  std::vector<TrialResult> trials;
};

inline constexpr std::size_t kLossWindows = 20;

inline std::vector<double> windowed_losses(const std::vector<double>& trace) {
  std::vector<double> out;
  if (trace.empty()) return out;
  const std::size_t w = std::max<std::size_t>(1, (trace.size() + kLossWindows - 1) / kLossWindows);
  for (std::size_t i = 0; i < trace.size(); i += w) {
    const std::size_t end = std::min(trace.size(), i + w);
    double s = 0.0;
    for (std::size_t k = i; k < end; ++k) s += trace[k];
    out.push_back(s / static_cast<double>(end - i));
  }
  return out;
}

inline Hyperparams trial_hyperparams(const SearchOptions& opt, int index) {
  auto hp = sample_hyperparams(derive_seed(opt.seed, "trial", static_cast<std::uint64_t>(index)),
                               opt.profile.lr_range);
  hp.iterations = opt.iterations;
  hp.decay_every = opt.profile.decay_every;
  return hp;
}

inline std::string trial_checkpoint_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "checkpoints/trial_%03d.ck", index);
  return buf;
}

// Trains every trial, scores it on the tune patches and writes
// <dir>/checkpoints/trial_NNN.ck plus <dir>/search.jsonl (header line, then
// one record per trial in index order). Trials are independent; with
// jobs > 1 they run on a small thread pool.
inline SearchReport run_search(const PatchSets& sets, const SearchOptions& opt,
                               const fs::path& dir, AuditLog& audit) {
  opt.profile.validate();
  require(opt.trials >= 1, "at least one trial is required");
  require(opt.iterations >= 1, "iteration budget must be at least 1");
  fs::create_directories(dir / "checkpoints");

  SearchReport report;
  report.header = {{"type", "header"},
                   {"profile", opt.profile.name},
                   {"seed", opt.seed},
                   {"trials", opt.trials},
                   {"iterations_per_trial", opt.iterations},
                   {"budget_note", "per-trial iteration budget is a profile setting (" +
                                       std::to_string(opt.iterations) +
                                       " iterations); only the decay period is fixed by the recipe"},
                   {"decay_every", opt.profile.decay_every},
                   {"lr_range", opt.profile.lr_range},
                   {"batch_size", Hyperparams{}.batch_size},
                   {"network", opt.profile.network},
                   {"norm", sets.norm},
                   {"train_patches", sets.train.size()},
                   {"tune_patches", sets.tune.size()}};
  report.trials.resize(static_cast<std::size_t>(opt.trials));

  std::atomic<int> next{0};
  std::mutex mu;
  std::exception_ptr error;
  auto worker = [&] {
    for (int i = next++; i < opt.trials; i = next++) {
      try {
        TrialResult r;
        r.index = i;
        r.hyperparams = trial_hyperparams(opt, i);
        auto outcome = train_trial(opt.profile.network, r.hyperparams, sets.train, sets.norm);
        r.failed = outcome.failed;
        r.failure = outcome.failure;
        r.losses = windowed_losses(outcome.checkpoint.loss_trace);
        if (!outcome.checkpoint.loss_trace.empty()) r.final_loss = outcome.checkpoint.loss_trace.back();
        if (!r.failed) {
          outcome.checkpoint.metadata["trial"] = i;
          r.checkpoint = trial_checkpoint_name(i);
          nn::save_checkpoint(dir / r.checkpoint, outcome.checkpoint);
          r.checkpoint_id = nn::checkpoint_id(outcome.checkpoint);
          r.tune_accuracy = patch_accuracy(outcome.checkpoint, sets.tune);
          audit.record(i, "tune", r.tune_accuracy);
        }
        std::lock_guard lock(mu);
        report.trials[static_cast<std::size_t>(i)] = r;
        if (opt.on_trial) opt.on_trial(r);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        next = opt.trials;
      }
    }
  };
  const int jobs = std::clamp(opt.jobs, 1, opt.trials);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);

  std::ostringstream os;
  os << report.header.dump() << '\n';
  for (const auto& t : report.trials) {
    nlohmann::json j = t;
    j["type"] = "trial";
    os << j.dump() << '\n';
  }
  write_text(dir / "search.jsonl", os.str());
  return report;
}

inline SearchReport read_search_report(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing search report " + path.string());
  SearchReport report;
  std::istringstream is(read_text(path));
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const auto type = j.value("type", "");
    if (type == "header")
      report.header = j;
    else if (type == "trial")
      report.trials.push_back(j.get<TrialResult>());
    else
      throw FormatError("unknown record type in search report: '" + type + "'");
  }
  if (report.header.is_null()) throw FormatError("search report has no header line");
  return report;
}

}  // namespace assist::train

#endif  // ASSIST_TRAIN_SEARCH_HPP_
