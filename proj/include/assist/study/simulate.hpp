#ifndef ASSIST_STUDY_SIMULATE_HPP_
#define ASSIST_STUDY_SIMULATE_HPP_

#include <array>
#include <cstdint>
#include <ctime>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "assist/core/error.hpp"
#include "assist/core/rng.hpp"
#include "assist/study/design.hpp"
#include "assist/study/records.hpp"

namespace assist::study {

struct ReaderPolicy {
  std::array<double, 3> base_accuracy{1.0, 1.0, 1.0};  // by grade 1, 2, 3
  double anchoring = 0.0;  // probability of adopting the shown model verdict
};

// Unassisted accuracy targets per subgroup, spread +-0.03 across grades.
inline constexpr double kGradeSpread = 0.03;

inline std::array<double, 3> graded(double mean) {
  return {std::min(1.0, mean + kGradeSpread), mean, std::max(0.0, mean - kGradeSpread)};
}

struct PolicySet {
  std::map<Subgroup, std::array<double, 3>> base_accuracy;
  double anchoring = 0.0;
  std::map<std::string, double> reader_anchoring;  // per-reader overrides

  // Unassisted accuracies of the published reader groups.
  static PolicySet calibrated(double anchoring = 0.0) {
    PolicySet p;
    p.base_accuracy = {{Subgroup::gi, graded(0.946)},
                       {Subgroup::non_gi, graded(0.842)},
                       {Subgroup::trainee, graded(0.858)},
                       {Subgroup::noc, graded(0.969)}};
    p.anchoring = anchoring;
    return p;
  }

  void validate() const {
    auto prob = [](double v) { return v >= 0.0 && v <= 1.0; };
    require(prob(anchoring), "anchoring weight must be in [0, 1]");
    for (const auto& [g, acc] : base_accuracy)
      for (double v : acc) require(prob(v), std::string("base accuracy for ") + subgroup_name(g) + " outside [0, 1]");
    for (const auto& [id, a] : reader_anchoring)
      require(prob(a), "anchoring override for " + id + " outside [0, 1]");
  }

  ReaderPolicy for_reader(const Reader& r) const {
    auto it = base_accuracy.find(r.subgroup);
    if (it == base_accuracy.end())
      throw PreconditionError(std::string("no base accuracy for subgroup ") + subgroup_name(r.subgroup));
    auto a = reader_anchoring.find(r.id);
    return {it->second, a == reader_anchoring.end() ? anchoring : a->second};
  }
};

inline void to_json(nlohmann::json& j, const PolicySet& p) {
  nlohmann::json base = nlohmann::json::object();
  for (const auto& [g, acc] : p.base_accuracy) base[subgroup_name(g)] = acc;
  j = {{"anchoring", p.anchoring}, {"base_accuracy", base}, {"reader_anchoring", p.reader_anchoring}};
}

inline void from_json(const nlohmann::json& j, PolicySet& p) {
  p = PolicySet{};
  p.anchoring = j.value("anchoring", 0.0);
  for (const auto& [k, v] : j.at("base_accuracy").items())
    p.base_accuracy[parse_subgroup(k)] = v.get<std::array<double, 3>>();
  p.reader_anchoring = j.value("reader_anchoring", std::map<std::string, double>{});
  p.validate();
}

// Assisted: adopt the model verdict with probability `anchoring`, otherwise
// read as if unassisted (correct with the grade's base accuracy).
inline Label simulate_read(const ReaderPolicy& policy, Label reference, int grade,
                           std::optional<Label> model_verdict, CounterRng& rng) {
  require(grade >= 1 && grade <= 3, "grade must be 1, 2 or 3");
  if (model_verdict && rng.bernoulli(policy.anchoring)) return *model_verdict;
  const bool correct = rng.bernoulli(policy.base_accuracy[std::size_t(grade - 1)]);
  return correct ? reference : (reference == Label::HCC ? Label::CC : Label::HCC);
}

// Model verdict shown to a reader for an assisted slide.
using VerdictFn = std::function<Label(const Reader& reader, const DesignSlide& slide)>;

// Model correct with probability `accuracy`, independently per (reader, slide),
// mirroring readers choosing their own patches.
inline VerdictFn simulated_model(double accuracy, std::uint64_t seed) {
  require(accuracy >= 0.0 && accuracy <= 1.0, "model accuracy must be in [0, 1]");
  return [accuracy, seed](const Reader& r, const DesignSlide& s) {
    auto rng = CounterRng::stream(seed, hash_string(r.id), hash_string(s.id), std::uint64_t{0x6d6f64656c});
    const bool correct = rng.bernoulli(accuracy);
    return correct ? s.label : (s.label == Label::HCC ? Label::CC : Label::HCC);
  };
}

inline VerdictFn recorded_verdicts(std::map<std::string, Label> by_slide) {
  return [m = std::move(by_slide)](const Reader&, const DesignSlide& s) {
    auto it = m.find(s.id);
    if (it == m.end()) throw PreconditionError("no recorded model verdict for slide " + s.id);
    return it->second;
  };
}

// ISO-8601 UTC time `seconds` after 2020-01-06T09:00:00Z.
inline std::string synthetic_timestamp(std::int64_t seconds) {
  const std::time_t t = 1578301200 + seconds;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline constexpr std::int64_t kWashoutSeconds = 28LL * 24 * 3600;
inline constexpr std::int64_t kSecondsPerRead = 90;

struct RunOptions {
  std::uint64_t seed = 0;
  std::uint64_t replication = 0;
  bool include_practice = false;
};

// One record per design slot (experiment slots only unless practice is
// requested). Every read draws from its own stream keyed by
// (seed, replication, reader, test, position).
inline std::vector<ReadRecord> run_study(const StudyDesign& design, const PolicySet& policies,
                                         const VerdictFn& verdicts, const RunOptions& opt = {}) {
  const auto violations = validate_design(design);
  if (!violations.empty())
    throw PreconditionError("design is invalid: " + violations.front().rule + " (" +
                            violations.front().detail + ")");
  policies.validate();
  std::vector<ReadRecord> out;
  for (std::size_t ri = 0; ri < design.readers.size(); ++ri) {
    const auto& reader = design.readers[ri];
    const auto policy = policies.for_reader(reader);
    for (const auto& a : assignments_for(design, ri)) {
      if (a.practice && !opt.include_practice) continue;
      const DesignSlide slide{a.slide_id, a.reference, a.grade};
      ReadRecord r;
      r.reader_id = reader.id;
      r.subgroup = reader.subgroup;
      r.order = reader.order;
      r.slide_id = a.slide_id;
      r.test = a.test;
      r.block = a.block;
      r.position = a.position;
      r.practice = a.practice;
      r.assisted = a.assisted;
      r.reference = a.reference;
      r.grade = a.grade;
      if (a.assisted) r.model_verdict = verdicts(reader, slide);
      auto rng = CounterRng::stream(opt.seed, opt.replication, std::uint64_t(ri),
                                    std::uint64_t(a.practice ? 0 : a.test),
                                    std::uint64_t(a.position));
      r.diagnosis = simulate_read(policy, a.reference, a.grade, r.model_verdict, rng);
      const std::int64_t slot = a.practice ? a.position : kPracticeSlides + a.position;
      r.timestamp = synthetic_timestamp((a.test - 1) * kWashoutSeconds + slot * kSecondsPerRead);
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace assist::study

#endif  // ASSIST_STUDY_SIMULATE_HPP_
