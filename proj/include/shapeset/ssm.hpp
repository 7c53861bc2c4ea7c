#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <span>
#include <vector>

#include "shapeset/geometry.hpp"
#include "shapeset/synthetic.hpp"

namespace shapeset {

/// Whitened principal-component coefficients of one part, z_V in R^q.
using GeometryLatent = Eigen::VectorXd;

/// Linear statistical shape model of one part category over corresponded
/// points. Points are flattened as (x0,y0,z0,x1,...) into R^{3p}.
struct PartSSM {
  int category = 0;
  int points_per_part = 0;
  Eigen::VectorXd mean;         // 3p
  Eigen::MatrixXd basis;        // 3p x q, orthonormal columns
  Eigen::VectorXd eigenvalues;  // q, positive, non-increasing

  int q() const { return static_cast<int>(eigenvalues.size()); }

  /// basis * diag(sqrt(eigenvalues)); the decode map's linear part.
  Eigen::MatrixXd scaled_basis() const;

  void validate() const;

  friend bool operator==(const PartSSM& a, const PartSSM& b) {
    return a.category == b.category && a.points_per_part == b.points_per_part && a.mean == b.mean &&
           a.basis == b.basis && a.eigenvalues == b.eigenvalues;
  }
};

/// Everything fit_ssm learned beyond the model itself.
struct SsmFitInfo {
  int requested_q = 0;
  int retained_q = 0;
  int sample_count = 0;
  double total_variance = 0.0;      // trace of the sample covariance
  double discarded_variance = 0.0;  // total minus retained eigenvalues
  std::vector<double> spectrum;     // leading eigenvalues (all above the rank floor), descending
  bool clamped = false;
};

/// Eigenvalues at or below this are never retained.
inline constexpr double kRankEpsilon = 1e-10;

/// PCA over the n x 3p variation matrix with the unbiased (n-1) covariance.
/// Uses the n x n Gram matrix when n < 3p. Column signs are canonicalized so
/// the largest-magnitude entry of each basis vector is positive. When fewer
/// than `q` eigenvalues exceed kRankEpsilon, q is clamped and `info->clamped`
/// is set; if none do, throws NumericalError.
PartSSM fit_ssm(std::span<const CorrespondedCloud> parts, int q, SsmFitInfo* info = nullptr);

Eigen::VectorXd flatten(std::span<const Point3> points);
PointCloud unflatten(const Eigen::VectorXd& flat);

/// z = Lambda^{-1/2} Q^T (x - mean)
GeometryLatent encode_part(const PartSSM& ssm, const CorrespondedCloud& cloud);

/// x = mean + Q (z * sqrt(Lambda))
CorrespondedCloud decode_part(const PartSSM& ssm, const GeometryLatent& z);

struct LatentFit {
  GeometryLatent z;
  double residual = 0.0;  // mean squared distance over observed points
  int iterations = 0;
  bool converged = false;
  std::vector<std::size_t> assignment;  // observed point -> template index
  std::vector<double> objective;        // regularized objective after each solve
};

/// Alternates nearest-template-index assignment on the current decoded shape
/// with the closed-form ridge solve for z until the assignment repeats or
/// `max_iterations`. Runs from a fixed set of starting latents (the mean, the
/// principal axes, seeded prior draws, and template order when the cloud has p
/// points) and returns the run with the lowest objective. Deterministic.
/// ridge = 0 is allowed only when the normal equations are nonsingular.
LatentFit fit_latent_least_squares(const PartSSM& ssm, std::span<const Point3> observed, double ridge,
                                   int max_iterations = 50);

/// `ssm_<category>.bin`: "SSMB" magic, u32 version, u32 category, u32 p, u32 q,
/// then mean (3p), basis column-major (3p*q), eigenvalues (q), all float64 LE.
void save_ssm(const PartSSM& ssm, const std::filesystem::path& path);
PartSSM load_ssm(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_ssm_binary(const PartSSM& ssm);
PartSSM decode_ssm_binary(std::span<const std::uint8_t> bytes, const std::string& what);

}  // namespace shapeset
