#ifndef ASSIST_STATS_READS_MODEL_HPP_
#define ASSIST_STATS_READS_MODEL_HPP_

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "assist/core/error.hpp"
#include "assist/stats/glmm.hpp"
#include "assist/stats/wald.hpp"
#include "assist/study/records.hpp"

namespace assist::stats {

using study::ReadRecord;
using study::Subgroup;

// Which assistance encoding the fixed-effect design uses.
enum class AssistanceTerm {
  assisted,       // single assisted indicator
  model_outcome,  // assisted & model correct, assisted & model incorrect
};

inline constexpr const char* kAssisted = "assisted";
inline constexpr const char* kAssistedCorrect = "assisted:model_correct";
inline constexpr const char* kAssistedIncorrect = "assisted:model_incorrect";

struct EncodedReads {
  GlmmData data;
  std::vector<std::string> notes;
};

// Treatment contrasts against unassisted / trainee / CC truth / order 1 /
// grade 1. NOC readers keep their own subgroup level. Levels absent from the
// data are dropped (noted) so the design stays full rank. Practice reads are
// excluded.
inline EncodedReads encode_reads(std::span<const ReadRecord> records, AssistanceTerm term) {
  std::vector<const ReadRecord*> rows;
  for (const auto& r : records) {
    if (r.practice) continue;
    if (auto problem = study::check_record(r))
      throw PreconditionError("invalid read (" + r.reader_id + ", " + r.slide_id + "): " + *problem);
    rows.push_back(&r);
  }
  require(!rows.empty(), "no experiment reads to analyze");

  EncodedReads out;
  struct Column {
    std::string name;
    std::function<double(const ReadRecord&)> value;
  };
  std::vector<Column> cols{{"(Intercept)", [](const ReadRecord&) { return 1.0; }}};
  if (term == AssistanceTerm::assisted) {
    cols.push_back({kAssisted, [](const ReadRecord& r) { return r.assisted ? 1.0 : 0.0; }});
  } else {
    cols.push_back({kAssistedCorrect,
                    [](const ReadRecord& r) { return r.assisted && r.model_correct() ? 1.0 : 0.0; }});
    cols.push_back({kAssistedIncorrect, [](const ReadRecord& r) {
                      return r.assisted && !r.model_correct() ? 1.0 : 0.0;
                    }});
  }
  for (Subgroup g : {Subgroup::gi, Subgroup::non_gi, Subgroup::noc})
    cols.push_back({std::string("subgroup:") + study::subgroup_name(g),
                    [g](const ReadRecord& r) { return r.subgroup == g ? 1.0 : 0.0; }});
  cols.push_back({"truth:HCC", [](const ReadRecord& r) {
                    return r.reference == patch::Label::HCC ? 1.0 : 0.0;
                  }});
  cols.push_back({"order:2", [](const ReadRecord& r) { return r.order == 2 ? 1.0 : 0.0; }});
  cols.push_back({"grade:2", [](const ReadRecord& r) { return r.grade == 2 ? 1.0 : 0.0; }});
  cols.push_back({"grade:3", [](const ReadRecord& r) { return r.grade == 3 ? 1.0 : 0.0; }});

  std::vector<Column> kept;
  for (auto& c : cols) {
    bool any = false;
    for (const auto* r : rows) any = any || c.value(*r) != 0.0;
    if (any)
      kept.push_back(std::move(c));
    else
      out.notes.push_back("dropped column '" + c.name + "': level absent from the data");
  }

  auto& d = out.data;
  d.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kept.size()));
  d.y.resize(static_cast<Eigen::Index>(rows.size()));
  std::map<std::string, int> readers, slides;
  for (const auto* r : rows) {
    readers.emplace(r->reader_id, 0);
    slides.emplace(r->slide_id, 0);
  }
  for (auto& [id, idx] : readers) {
    idx = d.n_readers++;
    d.reader_ids.push_back(id);
  }
  for (auto& [id, idx] : slides) {
    idx = d.n_slides++;
    d.slide_ids.push_back(id);
  }
  for (const auto& c : kept) d.names.push_back(c.name);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = *rows[i];
    for (std::size_t k = 0; k < kept.size(); ++k)
      d.x(Eigen::Index(i), Eigen::Index(k)) = kept[k].value(r);
    d.y[Eigen::Index(i)] = r.correct() ? 1.0 : 0.0;
    d.reader.push_back(readers[r.reader_id]);
    d.slide.push_back(slides[r.slide_id]);
  }
  bool has_noc = std::any_of(rows.begin(), rows.end(),
                             [](const ReadRecord* r) { return r->subgroup == Subgroup::noc; });
  if (has_noc) out.notes.push_back("NOC readers are modeled as their own subgroup level");
  return out;
}

inline constexpr int kLowPowerIncorrect = 10;

struct BiasContrast {
  GlmmFit fit;
  std::vector<std::string> notes;
  WaldResult model_correct;
  std::optional<WaldResult> model_incorrect;  // absent when inestimable
  int assisted_incorrect_reads = 0;
  bool low_power = false;
};

// Refits the model with the assistance flag split by model correctness.
inline BiasContrast bias_contrast(std::span<const ReadRecord> records,
                                  const GlmmOptions& opt = {}) {
  BiasContrast bc;
  for (const auto& r : records)
    if (!r.practice && r.assisted && !r.model_correct()) ++bc.assisted_incorrect_reads;
  bc.low_power = bc.assisted_incorrect_reads < kLowPowerIncorrect;
  auto enc = encode_reads(records, AssistanceTerm::model_outcome);
  bc.notes = enc.notes;
  if (bc.low_power)
    bc.notes.push_back("low power: only " + std::to_string(bc.assisted_incorrect_reads) +
                       " assisted reads with an incorrect model verdict");
  bc.fit = fit_glmm(enc.data, opt);
  bc.model_correct = wald_test(bc.fit, kAssistedCorrect);
  const auto& names = bc.fit.names;
  if (std::find(names.begin(), names.end(), kAssistedIncorrect) != names.end()) {
    bc.model_incorrect = wald_test(bc.fit, kAssistedIncorrect);
    if (bc.low_power) {
      bc.model_incorrect->unreliable = true;
      bc.model_incorrect->note = "fewer than " + std::to_string(kLowPowerIncorrect) +
                                 " assisted reads with an incorrect model verdict";
    }
  }
  return bc;
}

inline nlohmann::json fit_json(const GlmmFit& fit, const std::vector<std::string>& notes) {
  nlohmann::json coefs = nlohmann::json::array();
  for (std::size_t k = 0; k < fit.names.size(); ++k) {
    const auto w = wald_test(fit, fit.names[k]);
    coefs.push_back({{"name", fit.names[k]},
                     {"estimate", w.estimate},
                     {"se", w.se},
                     {"wald_chi2", w.statistic},
                     {"p_value", w.p_value},
                     {"odds_ratio", w.odds_ratio},
                     {"or_ci95", {w.ci_lower, w.ci_upper}},
                     {"unreliable", w.unreliable}});
  }
  return {{"coefficients", coefs},
          {"variance_components",
           {{"reader", {{"sd", fit.sigma_reader}, {"variance", fit.sigma_reader * fit.sigma_reader}}},
            {"slide", {{"sd", fit.sigma_slide}, {"variance", fit.sigma_slide * fit.sigma_slide}}}}},
          {"loglik", fit.loglik},
          {"converged", fit.converged},
          {"inner_converged", fit.inner_converged},
          {"boundary", fit.boundary},
          {"boundary_components", fit.boundary_components},
          {"singleton_groups", fit.singleton_groups},
          {"outer_iterations", fit.outer_iterations},
          {"gradient_norm", fit.gradient_norm},
          {"covariance_source", fit.covariance_source},
          {"notes", notes},
          {"convergence_log", fit.log}};
}

// Full analysis: main assistance model plus the model-correctness contrast.
inline nlohmann::json analyze_reads(std::span<const ReadRecord> records, const GlmmOptions& opt = {}) {
  auto enc = encode_reads(records, AssistanceTerm::assisted);
  const auto fit = fit_glmm(enc.data, opt);
  nlohmann::json out;
  out["records"] = enc.data.rows();
  out["readers"] = enc.data.n_readers;
  out["slides"] = enc.data.n_slides;
  out["baselines"] = {{"assistance", "unassisted"}, {"subgroup", "trainee"}, {"truth", "CC"},
                      {"order", 1},                 {"grade", 1}};
  out["assistance_model"] = fit_json(fit, enc.notes);
  out["assistance_model"]["assistance_effect"] = wald_test(fit, kAssisted);
  try {
    const auto bc = bias_contrast(records, opt);
    auto j = fit_json(bc.fit, bc.notes);
    j["model_correct_effect"] = bc.model_correct;
    j["model_incorrect_effect"] =
        bc.model_incorrect ? nlohmann::json(*bc.model_incorrect) : nlohmann::json();
    j["assisted_incorrect_reads"] = bc.assisted_incorrect_reads;
    j["low_power"] = bc.low_power;
    out["bias_contrast"] = j;
  } catch (const std::exception& e) {
    out["bias_contrast"] = {{"error", e.what()}};
  }
  return out;
}

}  // namespace assist::stats

#endif  // ASSIST_STATS_READS_MODEL_HPP_
