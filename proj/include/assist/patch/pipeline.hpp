#ifndef ASSIST_PATCH_PIPELINE_HPP_
#define ASSIST_PATCH_PIPELINE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "assist/core/error.hpp"
#include "assist/core/image.hpp"
#include "assist/core/rng.hpp"
#include "assist/nn/tensor.hpp"
#include "assist/patch/geometry.hpp"
#include "assist/patch/norm_stats.hpp"
#include "assist/patch/slide.hpp"

namespace assist::patch {

using nn::Tensor;

// Top-left corners (x, y) whose side x side square lies fully inside some ROI,
// in row-major order.
inline std::vector<std::pair<int, int>> admissible_positions(int width, int height,
                                                             std::span<const RoiPolygon> rois,
                                                             int side) {
  std::vector<std::pair<int, int>> out;
  if (side > width || side > height) return out;
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(width - side + 1) * (height - side + 1), 0);
  for (const auto& roi : rois) {
    auto [lo, hi] = roi.bounds();
    const int x0 = std::max(0, static_cast<int>(std::ceil(lo.x - geom::kEps)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(lo.y - geom::kEps)));
    const int x1 = std::min(width - side, static_cast<int>(std::floor(hi.x - side + geom::kEps)));
    const int y1 = std::min(height - side, static_cast<int>(std::floor(hi.y - side + geom::kEps)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        auto& flag = seen[static_cast<std::size_t>(y) * (width - side + 1) + x];
        if (!flag && roi.contains_square(x, y, side)) flag = 1;
      }
  }
  for (int y = 0; y <= height - side; ++y)
    for (int x = 0; x <= width - side; ++x)
      if (seen[static_cast<std::size_t>(y) * (width - side + 1) + x]) out.emplace_back(x, y);
  return out;
}

// n uniformly distributed patches, each fully inside an ROI. Positions come
// from rejection sampling over the ROI bounding box with a counter-based
// stream keyed by (seed, slide id), so results do not depend on the order in
// which slides are processed.
inline std::vector<PatchSample> sample_patches(const SlideImage& slide,
                                               std::span<const RoiPolygon> rois, int n, int side,
                                               std::uint64_t seed) {
  require(n >= 0, "patch count must be non-negative");
  require(side > 0, "patch side must be positive");
  const int w = slide.image.width, h = slide.image.height;
  require(w >= side && h >= side, "slide smaller than patch size");
  const auto positions = admissible_positions(w, h, rois, side);
  if (positions.empty())
    throw PreconditionError("no admissible patch position in slide " + slide.id +
                            " (ROI smaller than patch)");
  int bx0 = w, by0 = h, bx1 = 0, by1 = 0;
  for (auto [x, y] : positions) {
    bx0 = std::min(bx0, x);
    by0 = std::min(by0, y);
    bx1 = std::max(bx1, x);
    by1 = std::max(by1, y);
  }
  std::vector<std::uint8_t> ok(static_cast<std::size_t>(bx1 - bx0 + 1) * (by1 - by0 + 1), 0);
  for (auto [x, y] : positions) ok[static_cast<std::size_t>(y - by0) * (bx1 - bx0 + 1) + (x - bx0)] = 1;

  auto rng = CounterRng::stream(seed, slide.id);
  std::vector<PatchSample> out;
  out.reserve(static_cast<std::size_t>(n));
  while (static_cast<int>(out.size()) < n) {
    const int x = bx0 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(bx1 - bx0 + 1)));
    const int y = by0 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(by1 - by0 + 1)));
    if (!ok[static_cast<std::size_t>(y - by0) * (bx1 - bx0 + 1) + (x - bx0)]) continue;
    PatchSample p;
    p.slide_id = slide.id;
    p.x = x;
    p.y = y;
    p.side = side;
    p.pixels = slide.image.crop(x, y, side, side);
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<PatchSample> sample_patches(const SlideImage& slide, int n, int side,
                                               std::uint64_t seed) {
  return sample_patches(slide, slide.rois, n, side, seed);
}

// Planar (3, H, W) float view of an RGB image with values in [0, 1].
inline Tensor<float> to_tensor(const RgbImage& img) {
  const std::size_t h = img.height, w = img.width;
  Tensor<float> t({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        t[(c * h + y) * w + x] = img.pixels[(y * w + x) * 3 + c] / 255.0f;
  return t;
}

// Streaming per-channel mean/variance (Welford), in double.
class ChannelMoments {
 public:
  void add(int channel, double v) {
    auto& m = moments_[channel];
    ++m.n;
    const double d = v - m.mean;
    m.mean += d / static_cast<double>(m.n);
    m.m2 += d * (v - m.mean);
  }

  void add(const Tensor<float>& planar) {
    require(planar.rank() == 3 && planar.dim(0) == 3, "expected a (3, H, W) tensor");
    const std::size_t plane = planar.dim(1) * planar.dim(2);
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i) add(c, planar[c * plane + i]);
  }

  void add(const RgbImage& img) {
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      add(static_cast<int>(i % 3), img.pixels[i] / 255.0);
  }

  NormStats finish() const {
    NormStats s;
    for (int c = 0; c < 3; ++c) {
      const auto& m = moments_[c];
      require(m.n > 0, "norm stats need at least one pixel");
      s.mean[c] = m.mean;
      s.std[c] = std::sqrt(m.m2 / static_cast<double>(m.n));
      if (!(s.std[c] > 0.0))
        throw PreconditionError("zero variance in channel " + std::to_string(c));
    }
    return s;
  }

 private:
  struct Moments {
    std::uint64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;
  };
  std::array<Moments, 3> moments_{};
};

// Population mean/std per channel over every pixel of every patch.
inline NormStats compute_norm_stats(std::span<const Tensor<float>> patches) {
  require(!patches.empty(), "norm stats need a nonempty patch set");
  ChannelMoments acc;
  for (const auto& p : patches) acc.add(p);
  return acc.finish();
}

inline NormStats compute_norm_stats(std::span<const PatchSample> patches) {
  require(!patches.empty(), "norm stats need a nonempty patch set");
  ChannelMoments acc;
  for (const auto& p : patches) acc.add(p.pixels);
  return acc.finish();
}

// (in - mean) / std per channel on a (3, H, W) tensor.
inline Tensor<float> normalize(const Tensor<float>& planar, const NormStats& stats) {
  require(stats.valid(), "invalid normalization stats");
  require(planar.rank() == 3 && planar.dim(0) == 3, "expected a (3, H, W) tensor");
  Tensor<float> out(planar.shape());
  const std::size_t plane = planar.dim(1) * planar.dim(2);
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = stats.mean[c], inv = 1.0 / stats.std[c];
    for (std::size_t i = 0; i < plane; ++i)
      out[c * plane + i] = static_cast<float>((planar[c * plane + i] - mean) * inv);
  }
  return out;
}

inline Tensor<float> normalize(const RgbImage& img, const NormStats& stats) {
  return normalize(to_tensor(img), stats);
}

// Dihedral group D4 on square images. id = rotation + 4 * flip, where
// rotation counts 90 degree counter-clockwise turns and flip mirrors
// horizontally after rotating. id 0 is the identity.
inline constexpr int kDihedralCount = 8;

// Source coordinate (row, col) feeding output (row, col) under transform id.
inline std::pair<int, int> dihedral_source(int id, int row, int col, int side) {
  if (id >= 4) col = side - 1 - col;
  for (int k = 0; k < (id & 3); ++k) {
    const int r = col, c = side - 1 - row;
    row = r;
    col = c;
  }
  return {row, col};
}

inline Tensor<float> augment(const Tensor<float>& planar, int transform_id) {
  require(transform_id >= 0 && transform_id < kDihedralCount, "transform id must be in 0..7");
  require(planar.rank() == 3 && planar.dim(1) == planar.dim(2), "augment needs a square patch");
  const int side = static_cast<int>(planar.dim(1));
  const std::size_t plane = planar.dim(1) * planar.dim(2);
  Tensor<float> out(planar.shape());
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      auto [sr, sc] = dihedral_source(transform_id, r, c, side);
      for (std::size_t ch = 0; ch < planar.dim(0); ++ch)
        out[ch * plane + r * side + c] = planar[ch * plane + sr * side + sc];
    }
  return out;
}

inline RgbImage augment(const RgbImage& img, int transform_id) {
  require(transform_id >= 0 && transform_id < kDihedralCount, "transform id must be in 0..7");
  require(img.width == img.height, "augment needs a square patch");
  RgbImage out(img.width, img.height);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      auto [sr, sc] = dihedral_source(transform_id, r, c, img.width);
      for (int ch = 0; ch < 3; ++ch) out.at(c, r, ch) = img.at(sc, sr, ch);
    }
  return out;
}

struct SplitCounts {
  int train = 20;
  int tune = 24;
  int validation = 26;
  int external = 80;
  int practice = 4;

  int total() const { return train + tune + validation + external + practice; }
  bool operator==(const SplitCounts&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SplitCounts, train, tune, validation, external,
                                                practice)

struct CatalogEntry {
  std::string id;
  Label label = Label::CC;
};

struct SplitManifest {
  std::vector<std::string> train, tune, validation, external, practice, unassigned;

  const std::vector<std::string>& of(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::tune: return tune;
      case Split::validation: return validation;
      case Split::external: return external;
      case Split::practice: return practice;
      default: return unassigned;
    }
  }
  bool operator==(const SplitManifest&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SplitManifest, train, tune, validation, external, practice,
                                   unassigned)

// Class-balanced disjoint splits: each split takes half its slides from each
// class. Leftover slides are listed as unassigned so the manifest always
// partitions the catalog.
inline SplitManifest build_splits(std::span<const CatalogEntry> catalog, const SplitCounts& counts,
                                  std::uint64_t seed) {
  const int sizes[5] = {counts.train, counts.tune, counts.validation, counts.external, counts.practice};
  for (int s : sizes) require(s >= 0 && s % 2 == 0, "split sizes must be even for class balance");
  std::vector<std::string> by_class[2];
  for (const auto& e : catalog) by_class[label_index(e.label)].push_back(e.id);
  for (auto& ids : by_class) {
    std::sort(ids.begin(), ids.end());
    require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(), "duplicate slide id in catalog");
  }
  const int per_class = counts.total() / 2;
  for (int k = 0; k < 2; ++k)
    if (static_cast<int>(by_class[k].size()) < per_class)
      throw PreconditionError("insufficient " + std::string(label_name(Label(k))) + " slides: need " +
                              std::to_string(per_class) + ", have " +
                              std::to_string(by_class[k].size()));

  SplitManifest m;
  std::vector<std::string>* targets[5] = {&m.train, &m.tune, &m.validation, &m.external, &m.practice};
  for (int k = 0; k < 2; ++k) {
    auto rng = CounterRng::stream(seed, "splits", static_cast<std::uint64_t>(k));
    rng.shuffle(std::span<std::string>(by_class[k]));
    std::size_t next = 0;
    for (int s = 0; s < 5; ++s)
      for (int i = 0; i < sizes[s] / 2; ++i) targets[s]->push_back(by_class[k][next++]);
    for (; next < by_class[k].size(); ++next) m.unassigned.push_back(by_class[k][next]);
  }
  for (auto* t : targets) std::sort(t->begin(), t->end());
  std::sort(m.unassigned.begin(), m.unassigned.end());
  return m;
}

}  // namespace assist::patch

#endif  // ASSIST_PATCH_PIPELINE_HPP_
