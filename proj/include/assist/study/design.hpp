#ifndef ASSIST_STUDY_DESIGN_HPP_
#define ASSIST_STUDY_DESIGN_HPP_

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "assist/core/error.hpp"
#include "assist/core/rng.hpp"
#include "assist/patch/catalog.hpp"
#include "assist/study/records.hpp"

namespace assist::study {

inline constexpr int kExperimentSlides = 80;
inline constexpr int kPracticeSlides = 4;
inline constexpr int kBlocks = 8;
inline constexpr int kBlockSize = 10;
inline constexpr int kTests = 2;

struct Reader {
  std::string id;
  Subgroup subgroup = Subgroup::trainee;
  int order = 1;

  bool operator==(const Reader&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Reader, id, subgroup, order)

struct DesignSlide {
  std::string id;
  Label label = Label::CC;
  int grade = 1;

  bool operator==(const DesignSlide&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DesignSlide, id, label, grade)

// Assistance flags of one reader: assisted[t][p] for test t (0-based) and
// sequence position p, plus the practice-block flags.
struct ReaderFlags {
  std::array<std::vector<std::uint8_t>, kTests> assisted;
  std::vector<std::uint8_t> practice;

  bool operator==(const ReaderFlags&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ReaderFlags, assisted, practice)

struct StudyDesign {
  int version = 1;
  std::uint64_t seed = 0;
  std::vector<Reader> readers;
  std::vector<DesignSlide> practice;  // read before test 1
  std::vector<DesignSlide> sequence;  // identical in both tests and orders
  std::vector<ReaderFlags> flags;     // parallel to readers

  std::size_t reader_index(const std::string& id) const {
    for (std::size_t i = 0; i < readers.size(); ++i)
      if (readers[i].id == id) return i;
    throw PreconditionError("unknown reader " + id);
  }
  bool operator==(const StudyDesign&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(StudyDesign, version, seed, readers, practice, sequence, flags)

inline int block_of(int position) { return position / kBlockSize + 1; }

// Block b (1-based) of test t (1-based) is assisted for this order.
inline bool scheduled_assisted(int order, int test, int block) {
  const bool first_block_assisted = (order == 1) == (test == 1);
  return ((block % 2) == 1) == first_block_assisted;
}

// Three GI specialists, three non-GI specialists, three trainees and two
// pathologists from other centres.
inline std::vector<Reader> default_readers() {
  std::vector<Reader> out;
  const std::pair<Subgroup, int> groups[] = {
      {Subgroup::gi, 3}, {Subgroup::non_gi, 3}, {Subgroup::trainee, 3}, {Subgroup::noc, 2}};
  int n = 0;
  for (auto [g, count] : groups)
    for (int i = 0; i < count; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "R%02d", ++n);
      out.push_back({buf, g, 1});
    }
  return out;
}

inline std::vector<DesignSlide> design_slides(const patch::Catalog& catalog, patch::Split split) {
  std::vector<DesignSlide> out;
  for (const auto* r : catalog.in_split(split)) out.push_back({r->id, r->label, r->grade});
  return out;
}

// Orders are assigned by stratified randomization (alternating within each
// subgroup after a shuffle), which keeps the two order groups balanced
// overall and within subgroups.
inline StudyDesign generate_design(std::vector<Reader> readers, std::vector<DesignSlide> experiment,
                                   std::vector<DesignSlide> practice, std::uint64_t seed) {
  require(!readers.empty(), "design needs at least one reader");
  if (experiment.size() != std::size_t(kExperimentSlides))
    throw PreconditionError("design needs " + std::to_string(kExperimentSlides) +
                            " experiment slides, got " + std::to_string(experiment.size()));
  if (practice.size() != std::size_t(kPracticeSlides))
    throw PreconditionError("design needs " + std::to_string(kPracticeSlides) +
                            " practice slides, got " + std::to_string(practice.size()));
  const auto hcc = std::count_if(practice.begin(), practice.end(),
                                 [](const DesignSlide& s) { return s.label == Label::HCC; });
  require(hcc == kPracticeSlides / 2, "practice block must contain 2 HCC and 2 CC slides");
  std::set<std::string> ids;
  for (const auto& r : readers) require(ids.insert(r.id).second, "duplicate reader id " + r.id);

  StudyDesign d;
  d.seed = seed;

  auto order_rng = CounterRng::stream(seed, "orders");
  int next_order = 1 + static_cast<int>(order_rng.uniform_int(2));
  for (Subgroup g : kSubgroups) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < readers.size(); ++i)
      if (readers[i].subgroup == g) members.push_back(i);
    order_rng.shuffle(std::span<std::size_t>(members));
    for (std::size_t i : members) {
      readers[i].order = next_order;
      next_order = 3 - next_order;
    }
  }
  d.readers = std::move(readers);

  std::sort(experiment.begin(), experiment.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  auto seq_rng = CounterRng::stream(seed, "sequence");
  seq_rng.shuffle(std::span<DesignSlide>(experiment));
  d.sequence = std::move(experiment);

  // Practice: one HCC and one CC assisted, then one of each unassisted.
  std::vector<DesignSlide> by_class[2];
  for (auto& s : practice) by_class[patch::label_index(s.label)].push_back(s);
  for (auto& v : by_class)
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  d.practice = {by_class[1][0], by_class[0][0], by_class[1][1], by_class[0][1]};

  for (const auto& r : d.readers) {
    ReaderFlags f;
    for (int t = 1; t <= kTests; ++t)
      for (int p = 0; p < kExperimentSlides; ++p)
        f.assisted[t - 1].push_back(scheduled_assisted(r.order, t, block_of(p)) ? 1 : 0);
    f.practice = {1, 1, 0, 0};
    d.flags.push_back(std::move(f));
  }
  return d;
}

struct Violation {
  std::string rule;
  std::string reader;  // empty when not reader-specific
  std::string slide;   // empty when not slide-specific
  std::string detail;

  bool operator==(const Violation&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Violation, rule, reader, slide, detail)

// Checks every design invariant. Rules are layered so that one fault yields
// one violation: block checks only look at positions that already satisfy
// the crossover complement, and readers with malformed flag vectors are
// reported once and skipped.
inline std::vector<Violation> validate_design(const StudyDesign& d) {
  std::vector<Violation> out;
  auto add = [&](std::string rule, std::string reader, std::string slide, std::string detail) {
    out.push_back({std::move(rule), std::move(reader), std::move(slide), std::move(detail)});
  };

  if (d.sequence.size() != std::size_t(kExperimentSlides))
    add("sequence-length", "", "", "sequence has " + std::to_string(d.sequence.size()) +
                                       " slides, expected " + std::to_string(kExperimentSlides));
  std::map<std::string, int> seen;
  for (const auto& s : d.sequence) ++seen[s.id];
  for (const auto& s : d.practice) ++seen[s.id];
  for (const auto& [id, n] : seen)
    if (n > 1) add("sequence-uniqueness", "", id, "slide appears " + std::to_string(n) + " times");

  const auto practice_hcc = std::count_if(d.practice.begin(), d.practice.end(),
                                          [](const DesignSlide& s) { return s.label == Label::HCC; });
  if (d.practice.size() != std::size_t(kPracticeSlides) || practice_hcc != kPracticeSlides / 2)
    add("practice-composition", "", "",
        "practice block has " + std::to_string(d.practice.size()) + " slides with " +
            std::to_string(practice_hcc) + " HCC; expected 4 with 2 HCC and 2 CC");

  if (d.flags.size() != d.readers.size())
    add("flag-count", "", "", "flags for " + std::to_string(d.flags.size()) + " of " +
                                  std::to_string(d.readers.size()) + " readers");

  int orders[3] = {0, 0, 0};
  std::set<std::string> ids;
  for (std::size_t ri = 0; ri < d.readers.size(); ++ri) {
    const auto& r = d.readers[ri];
    if (!ids.insert(r.id).second) add("reader-uniqueness", r.id, "", "duplicate reader id");
    if (r.order != 1 && r.order != 2) {
      add("order-value", r.id, "", "order must be 1 or 2");
      continue;
    }
    ++orders[r.order];
    if (ri >= d.flags.size()) continue;
    const auto& f = d.flags[ri];
    const std::size_t n = d.sequence.size();
    if (f.assisted[0].size() != n || f.assisted[1].size() != n) {
      add("flag-count", r.id, "", "expected " + std::to_string(n) + " flags per test");
      continue;
    }
    if (f.practice.size() != d.practice.size() ||
        std::count(f.practice.begin(), f.practice.end(), 1) * 2 != std::ptrdiff_t(f.practice.size()))
      add("practice-flags", r.id, "", "practice block must be half assisted, half unassisted");

    std::vector<bool> consistent(n);
    for (std::size_t p = 0; p < n; ++p) {
      consistent[p] = f.assisted[0][p] != f.assisted[1][p];
      if (!consistent[p])
        add("crossover-complement", r.id, d.sequence[p].id,
            "position " + std::to_string(p) + " has the same assistance status in both tests");
    }
    // Complement-consistent positions mirror each other across tests, so a
    // mixed block is reported once per block, not once per test.
    std::vector<std::string> schedule_errors;
    for (int b = 1; b <= kBlocks; ++b) {
      std::optional<std::uint8_t> value[kTests];
      int mixed_test = 0;
      std::string first_bad;
      for (int t = 0; t < kTests && !mixed_test; ++t)
        for (std::size_t p = std::size_t(b - 1) * kBlockSize;
             p < std::min(n, std::size_t(b) * kBlockSize); ++p) {
          if (!consistent[p]) continue;
          if (!value[t]) value[t] = f.assisted[t][p];
          if (f.assisted[t][p] != *value[t]) {
            mixed_test = t + 1;
            first_bad = d.sequence[p].id;
            break;
          }
        }
      if (mixed_test) {
        add("block-homogeneity", r.id, first_bad,
            "test " + std::to_string(mixed_test) + " block " + std::to_string(b) +
                " mixes assisted and unassisted reads");
        continue;
      }
      for (int t = 0; t < kTests; ++t)
        if (value[t] && (*value[t] != 0) != scheduled_assisted(r.order, t + 1, b))
          schedule_errors.push_back("test " + std::to_string(t + 1) + " block " + std::to_string(b));
    }
    if (!schedule_errors.empty()) {
      std::string detail = "assistance schedule does not match order " + std::to_string(r.order) + ":";
      for (const auto& e : schedule_errors) detail += " " + e;
      add("block-schedule", r.id, "", detail);
    }
  }
  if (std::abs(orders[1] - orders[2]) > 1)
    add("order-balance", "", "", std::to_string(orders[1]) + " readers in order 1 vs " +
                                     std::to_string(orders[2]) + " in order 2");
  return out;
}

// Slot in a reader's schedule; the id is what clients submit reads against.
struct Assignment {
  std::string id;
  std::string reader_id;
  std::string slide_id;
  Label reference = Label::CC;
  int grade = 1;
  int test = 1;
  int block = 0;
  int position = 0;
  bool practice = false;
  bool assisted = false;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Assignment, id, reader_id, slide_id, reference, grade, test, block,
                                   position, practice, assisted)

inline std::string assignment_id(const std::string& reader, bool practice, int test, int position) {
  return reader + (practice ? "-P-" : "-T" + std::to_string(test) + "-") + std::to_string(position);
}

// Reading order of one reader: practice block, then test 1, then test 2.
inline std::vector<Assignment> assignments_for(const StudyDesign& d, std::size_t ri) {
  const auto& r = d.readers.at(ri);
  const auto& f = d.flags.at(ri);
  std::vector<Assignment> out;
  for (std::size_t p = 0; p < d.practice.size(); ++p) {
    const auto& s = d.practice[p];
    out.push_back({assignment_id(r.id, true, 1, int(p)), r.id, s.id, s.label, s.grade, 1, 0, int(p),
                   true, f.practice.at(p) != 0});
  }
  for (int t = 1; t <= kTests; ++t)
    for (std::size_t p = 0; p < d.sequence.size(); ++p) {
      const auto& s = d.sequence[p];
      out.push_back({assignment_id(r.id, false, t, int(p)), r.id, s.id, s.label, s.grade, t,
                     block_of(int(p)), int(p), false, f.assisted[t - 1].at(p) != 0});
    }
  return out;
}

inline std::vector<Assignment> all_assignments(const StudyDesign& d) {
  std::vector<Assignment> out;
  for (std::size_t i = 0; i < d.readers.size(); ++i) {
    auto a = assignments_for(d, i);
    out.insert(out.end(), a.begin(), a.end());
  }
  return out;
}

inline constexpr const char* kDesignCsvHeader =
    "assignment_id,reader_id,subgroup,order,practice,test,block,position,slide_id,reference,grade,"
    "assisted";

inline std::string design_csv(const StudyDesign& d) {
  std::ostringstream os;
  os << kDesignCsvHeader << '\n';
  for (std::size_t i = 0; i < d.readers.size(); ++i) {
    const auto& r = d.readers[i];
    for (const auto& a : assignments_for(d, i))
      os << a.id << ',' << r.id << ',' << subgroup_name(r.subgroup) << ',' << r.order << ','
         << (a.practice ? 1 : 0) << ',' << a.test << ',' << a.block << ',' << a.position << ','
         << a.slide_id << ',' << patch::label_name(a.reference) << ',' << a.grade << ','
         << (a.assisted ? 1 : 0) << '\n';
  }
  return os.str();
}

inline StudyDesign load_design(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing design file " + path.string());
  try {
    return nlohmann::json::parse(read_text(path)).get<StudyDesign>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed design file " + path.string() + ": " + e.what());
  }
}

}  // namespace assist::study

#endif  // ASSIST_STUDY_DESIGN_HPP_
