#ifndef ASSIST_CAM_CAM_HPP_
#define ASSIST_CAM_CAM_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>

#include <json.hpp>

#include "assist/cam/colormap.hpp"
#include "assist/core/error.hpp"
#include "assist/core/image.hpp"
#include "assist/nn/tensor.hpp"
#include "assist/patch/slide.hpp"

namespace assist::cam {

using nn::Tensor;
using Map = Tensor<double>;  // (H, W)

// raw(y, x) = sum_k head_weights[cls, k] * features[k, y, x]
template <typename S, typename W>
Map compute_cam(const Tensor<S>& features, const Tensor<W>& head_weights, int cls) {
  require(features.rank() == 3, "features must be (K, H, W)");
  require(head_weights.rank() == 2 && head_weights.dim(1) == features.dim(0),
          "head weights must be (classes, K) matching the feature channels");
  require(cls >= 0 && static_cast<std::size_t>(cls) < head_weights.dim(0), "class out of range");
  const std::size_t k = features.dim(0), plane = features.dim(1) * features.dim(2);
  Map raw({features.dim(1), features.dim(2)});
  for (std::size_t c = 0; c < k; ++c) {
    const double w = head_weights[static_cast<std::size_t>(cls) * k + c];
    if (w == 0.0) continue;
    const S* f = features.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) raw[i] += w * static_cast<double>(f[i]);
  }
  return raw;
}

struct ScaledCam {
  Map map;              // in [0, scale]
  double raw_min = 0.0;
  double raw_max = 0.0;
  double scale = 0.0;   // the class probability, applied verbatim
};

// Min-max normalize to [0, 1] then multiply by the class probability. A
// constant raw map carries no spatial signal and normalizes to zero.
inline ScaledCam scale_cam(const Map& raw, double prob) {
  require(prob >= 0.0 && prob <= 1.0, "probability must be in [0, 1]");
  ScaledCam out{Map(raw.shape()), 0.0, 0.0, prob};
  auto [lo, hi] = std::minmax_element(raw.values().begin(), raw.values().end());
  out.raw_min = *lo;
  out.raw_max = *hi;
  const double range = out.raw_max - out.raw_min;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < raw.size(); ++i) out.map[i] = (raw[i] - out.raw_min) / range * prob;
  return out;
}

// Corner-aligned bilinear interpolation; output stays within the source range.
inline Map upsample(const Map& src, std::size_t target_h, std::size_t target_w) {
  require(src.rank() == 2, "map must be 2-d");
  const std::size_t sh = src.dim(0), sw = src.dim(1);
  require(target_h >= sh && target_w >= sw, "upsample target smaller than source");
  Map out({target_h, target_w});
  const double ry = target_h > 1 ? double(sh - 1) / double(target_h - 1) : 0.0;
  const double rx = target_w > 1 ? double(sw - 1) / double(target_w - 1) : 0.0;
  for (std::size_t y = 0; y < target_h; ++y) {
    const double fy = y * ry;
    const std::size_t y0 = std::min(static_cast<std::size_t>(fy), sh - 1);
    const std::size_t y1 = std::min(y0 + 1, sh - 1);
    const double ty = fy - double(y0);
    for (std::size_t x = 0; x < target_w; ++x) {
      const double fx = x * rx;
      const std::size_t x0 = std::min(static_cast<std::size_t>(fx), sw - 1);
      const std::size_t x1 = std::min(x0 + 1, sw - 1);
      const double tx = fx - double(x0);
      const double top = src[y0 * sw + x0] * (1.0 - tx) + src[y0 * sw + x1] * tx;
      const double bot = src[y1 * sw + x0] * (1.0 - tx) + src[y1 * sw + x1] * tx;
      out[y * target_w + x] = top * (1.0 - ty) + bot * ty;
    }
  }
  return out;
}

using Colormap = std::function<Rgb(double)>;

inline Rgb jet(double m) { return colormap(m); }

// out = (1 - alpha*m) * patch + alpha*m * colormap(m), rounded and clamped.
inline RgbImage overlay(const RgbImage& patch, const Map& map, double alpha,
                        const Colormap& cmap = jet) {
  require(map.rank() == 2 && map.dim(0) == std::size_t(patch.height) &&
              map.dim(1) == std::size_t(patch.width),
          "overlay map must match patch dimensions");
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must be in [0, 1]");
  RgbImage out = patch;
  for (int y = 0; y < patch.height; ++y)
    for (int x = 0; x < patch.width; ++x) {
      const double m = std::clamp(map[std::size_t(y) * patch.width + x], 0.0, 1.0);
      const double a = alpha * m;
      if (a == 0.0) continue;
      const Rgb c = cmap(m);
      for (int k = 0; k < 3; ++k) {
        const double v = (1.0 - a) * patch.at(x, y, k) + a * c[k];
        out.at(x, y, k) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  return out;
}

struct CamHeatmap {
  patch::Label cls = patch::Label::CC;
  Map raw;
  ScaledCam scaled;
  Map upsampled;
  double probability = 0.0;
};

template <typename S, typename W>
CamHeatmap make_heatmap(const Tensor<S>& features, const Tensor<W>& head_weights, patch::Label cls,
                        double prob, std::size_t target_h, std::size_t target_w) {
  CamHeatmap h;
  h.cls = cls;
  h.probability = prob;
  h.raw = compute_cam(features, head_weights, patch::label_index(cls));
  h.scaled = scale_cam(h.raw, prob);
  h.upsampled = upsample(h.scaled.map, target_h, target_w);
  return h;
}

inline nlohmann::json sidecar(const CamHeatmap& h) {
  return {{"class", patch::label_name(h.cls)},
          {"raw_min", h.scaled.raw_min},
          {"raw_max", h.scaled.raw_max},
          {"probability", h.probability},
          {"feature_height", h.raw.dim(0)},
          {"feature_width", h.raw.dim(1)}};
}

// Writes <stem>_<class>.png overlays and <stem>_<class>.json sidecars.
inline void export_cam(const std::filesystem::path& dir, const std::string& stem,
                       const RgbImage& patch, const CamHeatmap& h, double alpha) {
  const std::string base = stem + "_" + patch::label_name(h.cls);
  save_png(dir / (base + ".png"), overlay(patch, h.upsampled, alpha));
  write_text(dir / (base + ".json"), sidecar(h).dump(2) + "\n");
}

}  // namespace assist::cam

#endif  // ASSIST_CAM_CAM_HPP_
