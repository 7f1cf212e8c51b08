#ifndef ASSIST_PATCH_SLIDE_HPP_
#define ASSIST_PATCH_SLIDE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "assist/core/error.hpp"
#include "assist/core/image.hpp"
#include "assist/core/rng.hpp"
#include "assist/patch/geometry.hpp"

namespace assist::patch {

// Class encoding matches the network output index (HCC is the positive class).
enum class Label { CC = 0, HCC = 1 };

NLOHMANN_JSON_SERIALIZE_ENUM(Label, {{Label::CC, "CC"}, {Label::HCC, "HCC"}})

inline int label_index(Label l) { return static_cast<int>(l); }
inline const char* label_name(Label l) { return l == Label::HCC ? "HCC" : "CC"; }
inline Label parse_label(const std::string& s) {
  if (s == "HCC") return Label::HCC;
  if (s == "CC") return Label::CC;
  throw PreconditionError("unknown label '" + s + "'");
}

enum class Split { train, tune, validation, external, practice, unassigned };

NLOHMANN_JSON_SERIALIZE_ENUM(Split, {{Split::train, "train"},
                                     {Split::tune, "tune"},
                                     {Split::validation, "validation"},
                                     {Split::external, "external"},
                                     {Split::practice, "practice"},
                                     {Split::unassigned, "unassigned"}})

struct SlideImage {
  std::string id;
  Label label = Label::CC;
  Split split = Split::unassigned;
  int grade = 1;  // 1 well, 2 moderately, 3 poorly differentiated
  RgbImage image;
  std::vector<RoiPolygon> rois;
};

struct PatchSample {
  std::string slide_id;
  int x = 0;  // top-left corner in slide pixels
  int y = 0;
  int side = 64;
  std::string magnification = "10x";  // metadata only
  RgbImage pixels;
};

// Procedural stand-in for H&E tissue. HCC regions are sheets of cells with
// dense round nuclei; CC regions are striated fibrous stroma with gland-like
// rings. Outside the ROI the slide is pale stroma. Bumping `version` is
// required whenever the rendering changes.
struct GeneratorParams {
  int version = 1;
  int slide_size = 256;
  double roi_min_radius = 0.32;  // fraction of slide size
  double roi_max_radius = 0.46;
  int roi_vertices = 10;
  double stain_jitter = 0.08;
  int pixel_noise = 7;

  bool operator==(const GeneratorParams&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GeneratorParams, version, slide_size, roi_min_radius,
                                                roi_max_radius, roi_vertices, stain_jitter,
                                                pixel_noise)

namespace detail {

using Color = std::array<double, 3>;

inline void blend(RgbImage& img, int x, int y, const Color& c, double alpha) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  for (int k = 0; k < 3; ++k) {
    const double v = img.at(x, y, k) * (1.0 - alpha) + c[k] * alpha;
    img.at(x, y, k) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }
}

inline void disk(RgbImage& img, const std::vector<std::uint8_t>& mask, double cx, double cy,
                 double r, const Color& c) {
  const int x0 = static_cast<int>(std::floor(cx - r - 1)), x1 = static_cast<int>(std::ceil(cx + r + 1));
  const int y0 = static_cast<int>(std::floor(cy - r - 1)), y1 = static_cast<int>(std::ceil(cy + r + 1));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
      if (!mask[static_cast<std::size_t>(y) * img.width + x]) continue;
      const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
      const double a = std::clamp(r + 0.5 - d, 0.0, 1.0);
      if (a > 0) blend(img, x, y, c, 0.9 * a);
    }
}

inline void ring(RgbImage& img, const std::vector<std::uint8_t>& mask, double cx, double cy,
                 double r, double thickness, const Color& lumen, const Color& rim) {
  const int x0 = static_cast<int>(std::floor(cx - r - thickness - 1));
  const int x1 = static_cast<int>(std::ceil(cx + r + thickness + 1));
  const int y0 = static_cast<int>(std::floor(cy - r - thickness - 1));
  const int y1 = static_cast<int>(std::ceil(cy + r + thickness + 1));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
      if (!mask[static_cast<std::size_t>(y) * img.width + x]) continue;
      const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
      if (d < r) blend(img, x, y, lumen, 0.85);
      else if (d < r + thickness) blend(img, x, y, rim, 0.8);
    }
}

}  // namespace detail

// Star-shaped (hence simple) polygon around the slide center.
inline RoiPolygon random_roi(const GeneratorParams& gp, CounterRng& rng) {
  const double c = gp.slide_size / 2.0;
  std::vector<Point> pts;
  const int n = std::max(3, gp.roi_vertices);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int i = 0; i < n; ++i) {
    const double a = phase + 2.0 * std::numbers::pi * (i + rng.uniform(-0.25, 0.25)) / n;
    const double r = gp.slide_size * rng.uniform(gp.roi_min_radius, gp.roi_max_radius);
    pts.push_back({std::clamp(c + r * std::cos(a), 0.0, double(gp.slide_size)),
                   std::clamp(c + r * std::sin(a), 0.0, double(gp.slide_size))});
  }
  return RoiPolygon(std::move(pts));
}

inline SlideImage generate_slide(const std::string& id, Label label, int grade,
                                 const GeneratorParams& gp, std::uint64_t seed) {
  auto rng = CounterRng::stream(seed, id);
  SlideImage s;
  s.id = id;
  s.label = label;
  s.grade = grade;
  s.rois.push_back(random_roi(gp, rng));
  const int n = gp.slide_size;
  s.image = RgbImage(n, n);

  detail::Color stain{};
  for (auto& v : stain) v = 1.0 + rng.uniform(-gp.stain_jitter, gp.stain_jitter);
  auto tint = [&](detail::Color c) {
    for (int k = 0; k < 3; ++k) c[k] = std::clamp(c[k] * stain[k], 0.0, 255.0);
    return c;
  };

  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n) * n, 0);
  const auto& roi = s.rois.front();
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) mask[static_cast<std::size_t>(y) * n + x] = roi.contains({x + 0.5, y + 0.5});

  const detail::Color stroma = tint({240, 222, 230});
  const detail::Color hcc_cyto = tint({222, 138, 176});
  const detail::Color cc_stroma = tint({236, 190, 208});
  const detail::Color nucleus = tint({92, 42, 122});
  const detail::Color lumen = tint({250, 244, 247});

  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double period = rng.uniform(7.0, 11.0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      detail::Color c = stroma;
      if (mask[static_cast<std::size_t>(y) * n + x]) {
        if (label == Label::HCC) {
          c = hcc_cyto;
        } else {
          const double t = std::sin(2.0 * std::numbers::pi *
                                    (x * std::cos(angle) + y * std::sin(angle)) / period);
          c = cc_stroma;
          for (auto& v : c) v -= 22.0 * (t > 0 ? t : 0);
        }
      }
      for (int k = 0; k < 3; ++k) {
        const double noise = rng.uniform(-gp.pixel_noise, gp.pixel_noise);
        s.image.at(x, y, k) = static_cast<std::uint8_t>(std::clamp(c[k] + noise, 0.0, 255.0));
      }
    }

  // Higher grade: larger, less regular nuclei.
  const double nuc_r = 2.2 + 0.5 * (grade - 1);
  const double irregular = 0.3 + 0.35 * (grade - 1);
  if (label == Label::HCC) {
    const double spacing = 9.0;
    for (double gy = spacing / 2; gy < n; gy += spacing)
      for (double gx = spacing / 2; gx < n; gx += spacing) {
        const double cx = gx + rng.uniform(-2.0, 2.0) * irregular;
        const double cy = gy + rng.uniform(-2.0, 2.0) * irregular;
        detail::disk(s.image, mask, cx, cy, nuc_r * rng.uniform(0.85, 1.15), nucleus);
      }
  } else {
    const double spacing = 30.0;
    for (double gy = spacing / 2; gy < n; gy += spacing)
      for (double gx = spacing / 2; gx < n; gx += spacing) {
        const double cx = gx + rng.uniform(-6.0, 6.0);
        const double cy = gy + rng.uniform(-6.0, 6.0);
        const double r = rng.uniform(6.0, 10.0);
        detail::ring(s.image, mask, cx, cy, r, 2.0 + 0.5 * (grade - 1), lumen, nucleus);
      }
    // sparse stromal nuclei
    const int scattered = n * n / 400;
    for (int i = 0; i < scattered; ++i)
      detail::disk(s.image, mask, rng.uniform(0, n), rng.uniform(0, n), nuc_r * 0.8, nucleus);
  }
  return s;
}

}  // namespace assist::patch

#endif  // ASSIST_PATCH_SLIDE_HPP_
