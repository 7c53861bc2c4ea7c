#pragma once

// Independent reference implementations used only by the tests.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "shapeset/geometry.hpp"

namespace oracle {

// Cyclic Jacobi rotations on a symmetric matrix. Returns eigenvalues in
// descending order with matching unit eigenvector columns.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> jacobi_eigen(Eigen::MatrixXd a, int sweeps = 100) {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  for (int s = 0; s < sweeps; ++s) {
    double off = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-30) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), sn = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return a(x, x) > a(y, y); });
  Eigen::VectorXd values(n);
  Eigen::MatrixXd vectors(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    values(i) = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    vectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
  return {values, vectors};
}

inline std::pair<std::size_t, double> nearest(const shapeset::Point3& q, const std::vector<shapeset::Point3>& target) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double dx = q.x - target[i].x, dy = q.y - target[i].y, dz = q.z - target[i].z;
    const double d = dx * dx + dy * dy + dz * dz;
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  return {best, bd};
}

// Minimum over all permutations of sum_i cost(i, perm(i)).
inline double permutation_min(const Eigen::MatrixXd& cost) {
  std::vector<int> perm(static_cast<std::size_t>(cost.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) c += cost(static_cast<Eigen::Index>(i), perm[i]);
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Keeps the `fraction` of points with the lowest projection on `dir`: a
// contiguous slab of the cloud.
inline std::vector<shapeset::Point3> slab_crop(const std::vector<shapeset::Point3>& pts, double fraction,
                                               const shapeset::Point3& dir) {
  std::vector<std::size_t> idx(pts.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto proj = [&](std::size_t i) { return pts[i].x * dir.x + pts[i].y * dir.y + pts[i].z * dir.z; };
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return proj(a) < proj(b); });
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(pts.size()))));
  std::vector<shapeset::Point3> out;
  for (std::size_t i = 0; i < keep; ++i) out.push_back(pts[idx[i]]);
  return out;
}

inline shapeset::Point3 random_direction(std::mt19937_64& gen) {
  std::normal_distribution<double> n(0.0, 1.0);
  shapeset::Point3 d{n(gen), n(gen), n(gen)};
  const double len = std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
  return {d.x / len, d.y / len, d.z / len};
}

// Symmetric-mean squared chamfer by exhaustive scans.
inline double chamfer(const std::vector<shapeset::Point3>& a, const std::vector<shapeset::Point3>& b) {
  double s = 0.0, t = 0.0;
  for (const auto& p : a) s += nearest(p, b).second;
  for (const auto& p : b) t += nearest(p, a).second;
  return s / static_cast<double>(a.size()) + t / static_cast<double>(b.size());
}

}  // namespace oracle
