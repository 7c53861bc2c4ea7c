#include "shapeset/geometry.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

#include "shapeset/error.hpp"

namespace shapeset {

namespace {
constexpr std::uint32_t kLeafSize = 12;
}

void require_valid_cloud(std::span<const Point3> cloud, const char* what) {
  if (cloud.empty()) throw ValidationError(std::string(what) + ": point cloud is empty");
  for (const auto& p : cloud) {
    if (!p.finite()) throw ValidationError(std::string(what) + ": point cloud contains non-finite coordinates");
  }
}

Point3 centroid(std::span<const Point3> cloud) {
  require_valid_cloud(cloud, "centroid");
  Point3 c;
  for (const auto& p : cloud) c += p;
  return c * (1.0 / static_cast<double>(cloud.size()));
}

BoundingBox bounding_box(std::span<const Point3> cloud) {
  require_valid_cloud(cloud, "bounding_box");
  BoundingBox box{cloud[0], cloud[0]};
  for (const auto& p : cloud) {
    for (std::size_t a = 0; a < 3; ++a) {
      box.lo[a] = std::min(box.lo[a], p[a]);
      box.hi[a] = std::max(box.hi[a], p[a]);
    }
  }
  return box;
}

std::pair<PointCloud, UnitCubeTransform> normalize_to_unit_cube(std::span<const Point3> cloud) {
  const BoundingBox box = bounding_box(cloud);
  double extent = 0.0;
  for (std::size_t a = 0; a < 3; ++a) extent = std::max(extent, box.hi[a] - box.lo[a]);
  if (!(extent > 0.0)) throw NumericalError("normalize_to_unit_cube: zero-extent cloud");

  UnitCubeTransform tf;
  tf.scale = 2.0 / extent;
  tf.offset = (box.lo + box.hi) * -0.5;

  PointCloud out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back(tf.apply(p));
  return {std::move(out), tf};
}

NearestResult nearest_neighbor_scan(const Point3& query, std::span<const Point3> target) {
  if (target.empty()) throw ValidationError("nearest_neighbor: empty target");
  NearestResult best{0, squared_distance(query, target[0])};
  for (std::size_t i = 1; i < target.size(); ++i) {
    const double d = squared_distance(query, target[i]);
    if (d < best.squared_distance) best = {i, d};
  }
  return best;
}

KdTree::KdTree(std::span<const Point3> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, static_cast<std::uint32_t>(points_.size()));
  }
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  Point3 lo = points_[order_[begin]], hi = lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    const auto& p = points_[order_[i]];
    for (std::size_t a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  std::uint8_t axis = 0;
  for (std::uint8_t a = 1; a < 3; ++a) {
    if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
  }
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double pa = points_[a][axis], pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  Node& n = nodes_[static_cast<std::size_t>(id)];
  n.axis = axis;
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

void KdTree::search(std::int32_t id, const Point3& q, NearestResult& best) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.left < 0) {
    for (std::uint32_t i = n.begin; i < n.end; ++i) {
      const std::uint32_t idx = order_[i];
      const double d = squared_distance(q, points_[idx]);
      if (d < best.squared_distance || (d == best.squared_distance && idx < best.index)) best = {idx, d};
    }
    return;
  }
  const double delta = q[n.axis] - n.split;
  const std::int32_t near = delta < 0.0 ? n.left : n.right;
  const std::int32_t far = delta < 0.0 ? n.right : n.left;
  search(near, q, best);
  // Equality keeps the far side alive so lower-index ties on the plane are found.
  if (delta * delta <= best.squared_distance) search(far, q, best);
}

NearestResult KdTree::nearest(const Point3& query) const {
  if (points_.empty()) throw ValidationError("nearest_neighbor: empty target");
  NearestResult best{std::numeric_limits<std::size_t>::max(), std::numeric_limits<double>::infinity()};
  search(0, query, best);
  return best;
}

NearestResult nearest_neighbor(const Point3& query, std::span<const Point3> target) {
  if (target.empty()) throw ValidationError("nearest_neighbor: empty target");
  if (target.size() <= 64) return nearest_neighbor_scan(query, target);
  return KdTree(target).nearest(query);
}

}  // namespace shapeset
