#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace shapeset {

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double operator[](std::size_t axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  double& operator[](std::size_t axis) { return axis == 0 ? x : (axis == 1 ? y : z); }

  Point3& operator+=(const Point3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Point3& operator-=(const Point3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  Point3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

  friend Point3 operator+(Point3 a, const Point3& b) { return a += b; }
  friend Point3 operator-(Point3 a, const Point3& b) { return a -= b; }
  friend Point3 operator*(Point3 a, double s) { return a *= s; }
  friend Point3 operator*(double s, Point3 a) { return a *= s; }
  friend bool operator==(const Point3&, const Point3&) = default;

  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

inline double distance(const Point3& a, const Point3& b) { return std::sqrt(squared_distance(a, b)); }

using PointCloud = std::vector<Point3>;

/// Throws ValidationError when the cloud is empty or holds non-finite points.
void require_valid_cloud(std::span<const Point3> cloud, const char* what);

Point3 centroid(std::span<const Point3> cloud);

struct BoundingBox {
  Point3 lo;
  Point3 hi;
};

BoundingBox bounding_box(std::span<const Point3> cloud);

/// Result of mapping a cloud into [-1,1]^3. The forward map is
/// `p' = (p + offset) * scale`; `restore` applies the inverse.
struct UnitCubeTransform {
  double scale = 1.0;
  Point3 offset;

  Point3 apply(const Point3& p) const { return (p + offset) * scale; }
  Point3 restore(const Point3& p) const { return p * (1.0 / scale) - offset; }
};

/// Uniform scaling about the bounding-box center so the largest extent spans
/// [-1,1]. Throws NumericalError on a zero-extent cloud.
std::pair<PointCloud, UnitCubeTransform> normalize_to_unit_cube(std::span<const Point3> cloud);

struct NearestResult {
  std::size_t index = 0;
  double squared_distance = 0.0;
};

/// Exhaustive scan; ties go to the lowest index.
NearestResult nearest_neighbor_scan(const Point3& query, std::span<const Point3> target);

/// Static 3-d tree over a point set. Query results are identical to
/// `nearest_neighbor_scan`, including the lowest-index tie rule.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Point3> points);

  NearestResult nearest(const Point3& query) const;

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

 private:
  struct Node {
    std::uint32_t begin = 0;  // range into order_
    std::uint32_t end = 0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::uint8_t axis = 0;
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Point3& q, NearestResult& best) const;

  std::vector<Point3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// Tree-backed nearest neighbor. Throws ValidationError on an empty target.
NearestResult nearest_neighbor(const Point3& query, std::span<const Point3> target);

}  // namespace shapeset
