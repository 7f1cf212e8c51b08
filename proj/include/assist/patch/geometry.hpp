#ifndef ASSIST_PATCH_GEOMETRY_HPP_
#define ASSIST_PATCH_GEOMETRY_HPP_

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "assist/core/error.hpp"

namespace assist::patch {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

inline void to_json(nlohmann::json& j, const Point& p) { j = nlohmann::json::array({p.x, p.y}); }
inline void from_json(const nlohmann::json& j, Point& p) {
  p.x = j.at(0).get<double>();
  p.y = j.at(1).get<double>();
}

namespace geom {

inline constexpr double kEps = 1e-9;

inline double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

inline bool on_segment(const Point& p, const Point& a, const Point& b) {
  return std::abs(cross(a, b, p)) <= kEps * std::max(1.0, std::hypot(b.x - a.x, b.y - a.y)) &&
         p.x >= std::min(a.x, b.x) - kEps && p.x <= std::max(a.x, b.x) + kEps &&
         p.y >= std::min(a.y, b.y) - kEps && p.y <= std::max(a.y, b.y) + kEps;
}

inline int sign(double v) { return v > kEps ? 1 : (v < -kEps ? -1 : 0); }

// Segments cross at a single point interior to both.
inline bool proper_intersection(const Point& a, const Point& b, const Point& c, const Point& d) {
  const int d1 = sign(cross(a, b, c)), d2 = sign(cross(a, b, d));
  const int d3 = sign(cross(c, d, a)), d4 = sign(cross(c, d, b));
  return d1 * d2 < 0 && d3 * d4 < 0;
}

inline bool segments_touch(const Point& a, const Point& b, const Point& c, const Point& d) {
  if (proper_intersection(a, b, c, d)) return true;
  return on_segment(c, a, b) || on_segment(d, a, b) || on_segment(a, c, d) || on_segment(b, c, d);
}

}  // namespace geom

// Closed simple polygon in slide pixel coordinates (boundary included).
class RoiPolygon {
 public:
  RoiPolygon() = default;
  explicit RoiPolygon(std::vector<Point> vertices) : vertices_(std::move(vertices)) {
    require(vertices_.size() >= 3, "ROI polygon needs at least 3 vertices");
    require(is_simple(), "ROI polygon must not self-intersect");
  }

  static RoiPolygon rectangle(double x0, double y0, double x1, double y1) {
    return RoiPolygon({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}});
  }

  const std::vector<Point>& vertices() const { return vertices_; }

  double area() const {
    double a = 0.0;
    for (std::size_t i = 0; i < vertices_.size(); ++i) {
      const auto& p = vertices_[i];
      const auto& q = vertices_[(i + 1) % vertices_.size()];
      a += p.x * q.y - q.x * p.y;
    }
    return std::abs(a) / 2.0;
  }

  // Inclusive point-in-polygon: boundary points count as inside.
  bool contains(const Point& p) const {
    const std::size_t n = vertices_.size();
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const auto& a = vertices_[i];
      const auto& b = vertices_[j];
      if (geom::on_segment(p, a, b)) return true;
      if ((a.y > p.y) != (b.y > p.y)) {
        const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
        if (p.x < x) inside = !inside;
      }
    }
    return inside;
  }

  // Axis-aligned square [x, x+side] x [y, y+side] lies fully inside: its
  // corners and center are inside, no polygon vertex is strictly inside the
  // square, and no polygon edge properly crosses a square edge.
  bool contains_square(double x, double y, double side) const {
    const Point corners[4] = {{x, y}, {x + side, y}, {x + side, y + side}, {x, y + side}};
    for (const auto& c : corners)
      if (!contains(c)) return false;
    if (!contains({x + side / 2, y + side / 2})) return false;
    for (const auto& v : vertices_)
      if (v.x > x + geom::kEps && v.x < x + side - geom::kEps && v.y > y + geom::kEps &&
          v.y < y + side - geom::kEps)
        return false;
    const std::size_t n = vertices_.size();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& a = vertices_[i];
      const auto& b = vertices_[(i + 1) % n];
      for (int k = 0; k < 4; ++k)
        if (geom::proper_intersection(a, b, corners[k], corners[(k + 1) % 4])) return false;
    }
    return true;
  }

  std::pair<Point, Point> bounds() const {
    Point lo{vertices_[0].x, vertices_[0].y}, hi = lo;
    for (const auto& v : vertices_) {
      lo = {std::min(lo.x, v.x), std::min(lo.y, v.y)};
      hi = {std::max(hi.x, v.x), std::max(hi.y, v.y)};
    }
    return {lo, hi};
  }

  bool operator==(const RoiPolygon&) const = default;

 private:
  bool is_simple() const {
    const std::size_t n = vertices_.size();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& a = vertices_[i];
      const auto& b = vertices_[(i + 1) % n];
      if (a == b) return false;
      for (std::size_t j = i + 1; j < n; ++j) {
        const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
        if (adjacent) continue;
        if (geom::segments_touch(a, b, vertices_[j], vertices_[(j + 1) % n])) return false;
      }
    }
    return area() > 0.0;
  }

  std::vector<Point> vertices_;
};

inline void to_json(nlohmann::json& j, const RoiPolygon& r) { j = r.vertices(); }
inline void from_json(const nlohmann::json& j, RoiPolygon& r) {
  r = RoiPolygon(j.get<std::vector<Point>>());
}

}  // namespace assist::patch

#endif  // ASSIST_PATCH_GEOMETRY_HPP_
