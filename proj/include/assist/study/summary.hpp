#ifndef ASSIST_STUDY_SUMMARY_HPP_
#define ASSIST_STUDY_SUMMARY_HPP_

#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "assist/core/error.hpp"
#include "assist/stats/distributions.hpp"
#include "assist/study/records.hpp"

namespace assist::study {

struct SummaryRow {
  std::string group;  // subgroup name, "pooled", or "model"
  bool assisted = false;
  stats::WilsonInterval interval;
};

struct Summary {
  std::vector<SummaryRow> rows;

  const SummaryRow& find(const std::string& group, bool assisted) const {
    for (const auto& r : rows)
      if (r.group == group && r.assisted == assisted) return r;
    throw PreconditionError("summary has no row for " + group);
  }
};

// Accuracy by subgroup x assistance, plus pooled rows and the accuracy of the
// model verdicts shown on assisted reads. Practice reads are excluded.
inline Summary summarize(std::span<const ReadRecord> records) {
  struct Count {
    std::int64_t correct = 0, total = 0;
  };
  std::map<std::pair<int, bool>, Count> by_group;
  Count pooled[2], model;
  for (const auto& r : records) {
    if (r.practice) continue;
    auto& c = by_group[{static_cast<int>(r.subgroup), r.assisted}];
    c.total += 1;
    c.correct += r.correct() ? 1 : 0;
    pooled[r.assisted].total += 1;
    pooled[r.assisted].correct += r.correct() ? 1 : 0;
    if (r.model_verdict) {
      model.total += 1;
      model.correct += r.model_correct() ? 1 : 0;
    }
  }
  require(pooled[0].total + pooled[1].total > 0, "no experiment reads to summarize");
  Summary s;
  for (Subgroup g : kSubgroups)
    for (bool a : {false, true}) {
      auto it = by_group.find({static_cast<int>(g), a});
      if (it == by_group.end()) continue;
      s.rows.push_back({subgroup_name(g), a, stats::wilson_interval(it->second.correct, it->second.total)});
    }
  for (bool a : {false, true})
    if (pooled[a].total > 0)
      s.rows.push_back({"pooled", a, stats::wilson_interval(pooled[a].correct, pooled[a].total)});
  if (model.total > 0) s.rows.push_back({"model", true, stats::wilson_interval(model.correct, model.total)});
  return s;
}

// "0.897 (0.875, 0.916)"
inline std::string format_accuracy(const stats::WilsonInterval& w) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3f (%.3f, %.3f)", w.estimate, w.lower, w.upper);
  return buf;
}

inline std::string summary_csv(const Summary& s) {
  std::ostringstream os;
  os << "group,assisted,correct,total,accuracy,ci_lower,ci_upper\n";
  char buf[96];
  for (const auto& r : s.rows) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f", r.interval.estimate, r.interval.lower,
                  r.interval.upper);
    os << r.group << ',' << (r.assisted ? 1 : 0) << ',' << r.interval.successes << ','
       << r.interval.trials << ',' << buf << '\n';
  }
  return os.str();
}

inline nlohmann::json summary_json(const Summary& s) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : s.rows)
    rows.push_back({{"group", r.group},
                    {"assisted", r.assisted},
                    {"correct", r.interval.successes},
                    {"total", r.interval.trials},
                    {"accuracy", r.interval.estimate},
                    {"ci95", {r.interval.lower, r.interval.upper}},
                    {"formatted", format_accuracy(r.interval)}});
  return {{"rows", rows}};
}

}  // namespace assist::study

#endif  // ASSIST_STUDY_SUMMARY_HPP_
