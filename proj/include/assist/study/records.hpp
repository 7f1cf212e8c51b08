#ifndef ASSIST_STUDY_RECORDS_HPP_
#define ASSIST_STUDY_RECORDS_HPP_

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "assist/core/error.hpp"
#include "assist/patch/slide.hpp"

namespace assist::study {

using patch::Label;

enum class Subgroup { gi, non_gi, trainee, noc };

inline constexpr Subgroup kSubgroups[] = {Subgroup::gi, Subgroup::non_gi, Subgroup::trainee,
                                          Subgroup::noc};

inline const char* subgroup_name(Subgroup s) {
  switch (s) {
    case Subgroup::gi: return "GI";
    case Subgroup::non_gi: return "non-GI";
    case Subgroup::trainee: return "trainee";
    case Subgroup::noc: return "NOC";
  }
  return "?";
}

inline Subgroup parse_subgroup(const std::string& s) {
  for (auto g : kSubgroups)
    if (s == subgroup_name(g)) return g;
  throw PreconditionError("unknown subgroup '" + s + "' (expected GI, non-GI, trainee or NOC)");
}

inline void to_json(nlohmann::json& j, Subgroup s) { j = subgroup_name(s); }
inline void from_json(const nlohmann::json& j, Subgroup& s) { s = parse_subgroup(j.get<std::string>()); }

// One diagnosis event. `test` is 1 or 2; practice reads happen before test 1
// and are excluded from the analysis.
struct ReadRecord {
  std::string reader_id;
  Subgroup subgroup = Subgroup::trainee;
  int order = 1;
  std::string slide_id;
  int test = 1;
  int block = 0;     // 0 for practice, 1..8 otherwise
  int position = 0;  // index in the reading sequence
  bool practice = false;
  bool assisted = false;
  Label diagnosis = Label::CC;
  Label reference = Label::CC;
  std::optional<Label> model_verdict;
  int grade = 1;
  std::string timestamp;

  bool correct() const { return diagnosis == reference; }
  bool model_correct() const { return model_verdict && *model_verdict == reference; }
  bool operator==(const ReadRecord&) const = default;
};

inline void to_json(nlohmann::json& j, const ReadRecord& r) {
  j = {{"reader_id", r.reader_id},     {"subgroup", r.subgroup}, {"order", r.order},
       {"slide_id", r.slide_id},       {"test", r.test},         {"block", r.block},
       {"position", r.position},       {"practice", r.practice}, {"assisted", r.assisted},
       {"diagnosis", r.diagnosis},     {"reference", r.reference},
       {"model_verdict", r.model_verdict ? nlohmann::json(*r.model_verdict) : nlohmann::json()},
       {"grade", r.grade},             {"timestamp", r.timestamp}};
}

inline void from_json(const nlohmann::json& j, ReadRecord& r) {
  r.reader_id = j.at("reader_id").get<std::string>();
  r.subgroup = j.at("subgroup").get<Subgroup>();
  r.order = j.at("order").get<int>();
  r.slide_id = j.at("slide_id").get<std::string>();
  r.test = j.at("test").get<int>();
  r.block = j.at("block").get<int>();
  r.position = j.at("position").get<int>();
  r.practice = j.at("practice").get<bool>();
  r.assisted = j.at("assisted").get<bool>();
  r.diagnosis = j.at("diagnosis").get<Label>();
  r.reference = j.at("reference").get<Label>();
  if (j.contains("model_verdict") && !j["model_verdict"].is_null())
    r.model_verdict = j["model_verdict"].get<Label>();
  else
    r.model_verdict.reset();
  r.grade = j.at("grade").get<int>();
  r.timestamp = j.value("timestamp", "");
}

// Field-level invariants; returns a description of the first problem.
inline std::optional<std::string> check_record(const ReadRecord& r) {
  if (r.reader_id.empty() || r.slide_id.empty()) return "empty reader or slide id";
  if (r.order != 1 && r.order != 2) return "order must be 1 or 2";
  if (r.test != 1 && r.test != 2) return "test must be 1 or 2";
  if (r.grade < 1 || r.grade > 3) return "grade must be 1, 2 or 3";
  if (r.assisted != r.model_verdict.has_value())
    return r.assisted ? "assisted read without a model verdict"
                      : "unassisted read carries a model verdict";
  return std::nullopt;
}

inline constexpr const char* kReadCsvHeader =
    "reader_id,subgroup,order,slide_id,test,block,position,practice,assisted,diagnosis,reference,"
    "model_verdict,grade,timestamp";

namespace detail {

inline void check_field(const std::string& v, const char* what) {
  if (v.find_first_of(",\n\r\"") != std::string::npos)
    throw PreconditionError(std::string(what) + " '" + v + "' contains a CSV delimiter");
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline int parse_int(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw FormatError(std::string("invalid ") + what + " '" + s + "'");
}

inline bool parse_bool(const std::string& s, const char* what) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw FormatError(std::string("invalid ") + what + " '" + s + "'");
}

}  // namespace detail

inline std::string records_csv(const std::vector<ReadRecord>& records) {
  std::ostringstream os;
  os << kReadCsvHeader << '\n';
  for (const auto& r : records) {
    detail::check_field(r.reader_id, "reader id");
    detail::check_field(r.slide_id, "slide id");
    detail::check_field(r.timestamp, "timestamp");
    os << r.reader_id << ',' << subgroup_name(r.subgroup) << ',' << r.order << ',' << r.slide_id
       << ',' << r.test << ',' << r.block << ',' << r.position << ',' << (r.practice ? 1 : 0) << ','
       << (r.assisted ? 1 : 0) << ',' << patch::label_name(r.diagnosis) << ','
       << patch::label_name(r.reference) << ','
       << (r.model_verdict ? patch::label_name(*r.model_verdict) : "") << ',' << r.grade << ','
       << r.timestamp << '\n';
  }
  return os.str();
}

inline std::vector<ReadRecord> parse_records_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw FormatError("read-record CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kReadCsvHeader) throw FormatError("unexpected read-record CSV header: " + line);
  std::vector<ReadRecord> out;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 14)
      throw FormatError("line " + std::to_string(lineno) + ": expected 14 fields, got " +
                        std::to_string(f.size()));
    try {
      ReadRecord r;
      r.reader_id = f[0];
      r.subgroup = parse_subgroup(f[1]);
      r.order = detail::parse_int(f[2], "order");
      r.slide_id = f[3];
      r.test = detail::parse_int(f[4], "test");
      r.block = detail::parse_int(f[5], "block");
      r.position = detail::parse_int(f[6], "position");
      r.practice = detail::parse_bool(f[7], "practice flag");
      r.assisted = detail::parse_bool(f[8], "assisted flag");
      r.diagnosis = patch::parse_label(f[9]);
      r.reference = patch::parse_label(f[10]);
      if (!f[11].empty()) r.model_verdict = patch::parse_label(f[11]);
      r.grade = detail::parse_int(f[12], "grade");
      r.timestamp = f[13];
      if (auto problem = check_record(r)) throw FormatError(*problem);
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace assist::study

#endif  // ASSIST_STUDY_RECORDS_HPP_
