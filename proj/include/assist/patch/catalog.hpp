#ifndef ASSIST_PATCH_CATALOG_HPP_
#define ASSIST_PATCH_CATALOG_HPP_

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "assist/core/encoding.hpp"
#include "assist/core/error.hpp"
#include "assist/core/image.hpp"
#include "assist/core/rng.hpp"
#include "assist/patch/pipeline.hpp"
#include "assist/patch/slide.hpp"

// On-disk slide catalog: one PNG per slide plus manifest.json carrying id,
// label, split, grade, file name, dimensions and ROI vertex lists.
namespace assist::patch {

namespace fs = std::filesystem;

struct SlideRecord {
  std::string id;
  Label label = Label::CC;
  Split split = Split::unassigned;
  int grade = 1;
  std::string file;
  int width = 0;
  int height = 0;
  std::vector<RoiPolygon> rois;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SlideRecord, id, label, split, grade, file, width, height, rois)

struct Catalog {
  int version = 1;
  std::uint64_t seed = 0;
  GeneratorParams generator;
  SplitCounts counts;
  std::vector<SlideRecord> slides;

  const SlideRecord& find(const std::string& id) const {
    auto it = std::find_if(slides.begin(), slides.end(), [&](const auto& s) { return s.id == id; });
    if (it == slides.end()) throw PreconditionError("unknown slide " + id);
    return *it;
  }

  std::vector<const SlideRecord*> in_split(Split split) const {
    std::vector<const SlideRecord*> out;
    for (const auto& s : slides)
      if (s.split == split) out.push_back(&s);
    return out;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Catalog, version, seed, generator, counts, slides)

inline SlideRecord record_of(const SlideImage& s) {
  return {s.id, s.label, s.split, s.grade, s.id + ".png", s.image.width, s.image.height, s.rois};
}

// Generates a class-balanced synthetic catalog sized for `counts`, with
// grades 1/2/3 assigned round-robin within each class.
inline std::vector<SlideImage> generate_slides(std::uint64_t seed, const GeneratorParams& gp,
                                               const SplitCounts& counts) {
  const int per_class = counts.total() / 2;
  std::vector<CatalogEntry> entries;
  std::vector<SlideImage> slides;
  auto grade_rng = CounterRng::stream(seed, "grades");
  for (int k = 0; k < 2; ++k) {
    std::vector<int> grades;
    for (int i = 0; i < per_class; ++i) grades.push_back(1 + i % 3);
    grade_rng.shuffle(std::span<int>(grades));
    for (int i = 0; i < per_class; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "S%04d", k * per_class + i + 1);
      const Label label = k == 0 ? Label::CC : Label::HCC;
      entries.push_back({buf, label});
      slides.push_back(generate_slide(buf, label, grades[i], gp, seed));
    }
  }
  const auto manifest = build_splits(entries, counts, seed);
  for (auto& s : slides)
    for (Split sp : {Split::train, Split::tune, Split::validation, Split::external, Split::practice})
      if (std::binary_search(manifest.of(sp).begin(), manifest.of(sp).end(), s.id)) s.split = sp;
  return slides;
}

inline void write_catalog(const fs::path& dir, const Catalog& catalog,
                          const std::vector<SlideImage>& slides) {
  fs::create_directories(dir);
  for (const auto& s : slides) save_png(dir / (s.id + ".png"), s.image);
  write_text(dir / "manifest.json", nlohmann::json(catalog).dump(2) + "\n");
}

inline Catalog generate_catalog(const fs::path& dir, std::uint64_t seed, const GeneratorParams& gp,
                                const SplitCounts& counts) {
  auto slides = generate_slides(seed, gp, counts);
  Catalog catalog{1, seed, gp, counts, {}};
  for (const auto& s : slides) catalog.slides.push_back(record_of(s));
  write_catalog(dir, catalog, slides);
  return catalog;
}

inline Catalog load_catalog(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) throw IoError("missing catalog manifest " + path.string());
  return nlohmann::json::parse(read_text(path)).get<Catalog>();
}

// Structural checks: unique ids, class-balanced split sizes, files present.
inline std::vector<std::string> validate_catalog(const fs::path& dir, const Catalog& c) {
  std::vector<std::string> problems;
  std::map<std::string, int> ids;
  std::map<Split, std::array<int, 2>> per_split;
  for (const auto& s : c.slides) {
    if (++ids[s.id] > 1) problems.push_back("duplicate slide id " + s.id);
    ++per_split[s.split][label_index(s.label)];
    if (!fs::exists(dir / s.file)) problems.push_back("missing image " + s.file);
    if (s.rois.empty()) problems.push_back("slide " + s.id + " has no ROI");
    if (s.grade < 1 || s.grade > 3) problems.push_back("slide " + s.id + " has invalid grade");
  }
  auto check = [&](Split sp, int want, const char* name) {
    const auto counts = per_split[sp];
    if (counts[0] != want / 2 || counts[1] != want / 2)
      problems.push_back(std::string("split ") + name + " is not " + std::to_string(want / 2) + "/" +
                         std::to_string(want / 2));
  };
  check(Split::train, c.counts.train, "train");
  check(Split::tune, c.counts.tune, "tune");
  check(Split::validation, c.counts.validation, "validation");
  check(Split::external, c.counts.external, "external");
  check(Split::practice, c.counts.practice, "practice");
  return problems;
}

inline SlideImage load_slide(const fs::path& dir, const SlideRecord& r) {
  SlideImage s;
  s.id = r.id;
  s.label = r.label;
  s.split = r.split;
  s.grade = r.grade;
  s.rois = r.rois;
  s.image = load_png(dir / r.file);
  if (s.image.width != r.width || s.image.height != r.height)
    throw FormatError("slide " + r.id + " dimensions differ from manifest");
  return s;
}

// Writes <slide>_<index>.png for each patch.
inline void export_patches(const fs::path& dir, std::span<const PatchSample> patches) {
  fs::create_directories(dir);
  std::map<std::string, int> index;
  for (const auto& p : patches) {
    const int i = index[p.slide_id]++;
    save_png(dir / (p.slide_id + "_" + std::to_string(i) + ".png"), p.pixels);
  }
}

}  // namespace assist::patch

#endif  // ASSIST_PATCH_CATALOG_HPP_
