#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shapeset/assignment.hpp"
#include "shapeset/geometry.hpp"
#include "shapeset/synthetic.hpp"

namespace shapeset {

/// mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2
double chamfer(std::span<const Point3> a, std::span<const Point3> b);

/// One direction of the above with plain (unsquared) distances.
double mean_nearest_distance(std::span<const Point3> from, std::span<const Point3> to);

inline constexpr std::size_t kExactEmdLimit = 512;

enum class EmdMode { Auto, Exact, Entropic };

/// Mean Euclidean cost of the optimal one-to-one matching. Auto is exact up
/// to kExactEmdLimit points and entropic above.
double emd(std::span<const Point3> a, std::span<const Point3> b, EmdMode mode = EmdMode::Auto,
           const SinkhornOptions& sinkhorn = {});

enum class CloudDistance { Chamfer, Emd };

/// Distances between every pair in `clouds`; symmetric, zero diagonal.
Eigen::MatrixXd distance_matrix(std::span<const PointCloud> clouds, CloudDistance kind);

/// Set metrics over a precomputed distance matrix of gen (first `gen_count`
/// items) followed by ref.
double mmd_from_matrix(const Eigen::MatrixXd& d, std::size_t gen_count);
double cov_from_matrix(const Eigen::MatrixXd& d, std::size_t gen_count);
double nna_from_matrix(const Eigen::MatrixXd& d, std::size_t gen_count);

double mmd(std::span<const PointCloud> gen, std::span<const PointCloud> ref, CloudDistance kind);
double cov(std::span<const PointCloud> gen, std::span<const PointCloud> ref, CloudDistance kind);
double nna(std::span<const PointCloud> gen, std::span<const PointCloud> ref, CloudDistance kind);

/// Merged parts, normalized to [-1,1]^3, uniformly subsampled without
/// replacement to at most `max_points` with a fixed seed.
PointCloud eval_cloud(const SegmentedShape& shape, std::size_t max_points = 2048, std::uint64_t seed = 0);
PointCloud subsample(std::span<const Point3> cloud, std::size_t count, std::uint64_t seed);

struct EvalOptions {
  bool with_emd = true;
  std::size_t emd_points = 256;  // both clouds subsampled to this count for EMD
  std::uint64_t seed = 0;
};

/// Raw (unscaled) values; scaling happens only when reporting.
struct EvalReport {
  double mmd_cd = 0.0, cov_cd = 0.0, nna_cd = 0.0;
  double mmd_emd = 0.0, cov_emd = 0.0, nna_emd = 0.0;
  bool has_emd = false;
  std::size_t gen_count = 0;
  std::size_t ref_count = 0;
  std::size_t emd_points = 0;

  /// JSON with MMD-CD x10^3 and MMD-EMD x10^2 plus the conventions used.
  std::string to_json() const;
  std::string to_table() const;
};

EvalReport evaluate(std::span<const PointCloud> gen, std::span<const PointCloud> ref, const EvalOptions& options = {});

}  // namespace shapeset
