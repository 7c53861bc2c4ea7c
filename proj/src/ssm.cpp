#include "shapeset/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "shapeset/binary_io.hpp"
#include "shapeset/error.hpp"
#include "shapeset/rng.hpp"

namespace shapeset {

namespace {

constexpr std::uint32_t kSsmVersion = 1;
constexpr int kRandomStarts = 64;
constexpr std::uint64_t kStartSeed = 0x5eed;
constexpr double kStartRadius = 2.0;
constexpr std::array<std::uint8_t, 4> kSsmMagic{'S', 'S', 'M', 'B'};

void canonicalize_sign(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index arg = 0;
  double best = -1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > best) {
      best = std::abs(v[i]);
      arg = i;
    }
  }
  if (v[arg] < 0.0) v = -v;
}

}  // namespace

Eigen::VectorXd flatten(std::span<const Point3> points) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(3 * points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    out[static_cast<Eigen::Index>(3 * i)] = points[i].x;
    out[static_cast<Eigen::Index>(3 * i + 1)] = points[i].y;
    out[static_cast<Eigen::Index>(3 * i + 2)] = points[i].z;
  }
  return out;
}

PointCloud unflatten(const Eigen::VectorXd& flat) {
  PointCloud out(static_cast<std::size_t>(flat.size() / 3));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(3 * i);
    out[i] = {flat[k], flat[k + 1], flat[k + 2]};
  }
  return out;
}

Eigen::MatrixXd PartSSM::scaled_basis() const { return basis * eigenvalues.cwiseSqrt().asDiagonal(); }

void PartSSM::validate() const {
  const Eigen::Index dim = 3 * static_cast<Eigen::Index>(points_per_part);
  if (points_per_part < 1 || mean.size() != dim || basis.rows() != dim || basis.cols() != eigenvalues.size() ||
      eigenvalues.size() < 1) {
    throw ValidationError("ssm: inconsistent dimensions");
  }
  if (!mean.allFinite() || !basis.allFinite() || !eigenvalues.allFinite() || (eigenvalues.array() <= 0.0).any()) {
    throw ValidationError("ssm: parameters must be finite with positive eigenvalues");
  }
}

PartSSM fit_ssm(std::span<const CorrespondedCloud> parts, int q, SsmFitInfo* info) {
  const auto n = static_cast<Eigen::Index>(parts.size());
  if (n < 2) throw ValidationError("fit_ssm: need at least 2 shapes");
  const std::size_t p = parts[0].points.size();
  if (p == 0) throw ValidationError("fit_ssm: empty part cloud");
  for (const auto& part : parts) {
    if (part.points.size() != p) throw ValidationError("fit_ssm: inconsistent point counts");
    if (part.category != parts[0].category) throw ValidationError("fit_ssm: mixed categories");
  }
  const auto dim = static_cast<Eigen::Index>(3 * p);
  if (q < 1 || q > std::min<Eigen::Index>(n - 1, dim)) {
    throw ValidationError("fit_ssm: q=" + std::to_string(q) + " outside [1, min(n-1, 3p)]");
  }

  Eigen::MatrixXd x(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = flatten(parts[static_cast<std::size_t>(i)].points).transpose();
  const Eigen::VectorXd mean = x.colwise().mean().transpose();
  x.rowwise() -= mean.transpose();
  const double denom = static_cast<double>(n - 1);

  // Eigenpairs of the covariance, descending.
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  if (n < dim) {
    Eigen::MatrixXd gram = (x * x.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (es.info() != Eigen::Success) throw NumericalError("fit_ssm: eigensolver failed");
    values = es.eigenvalues().reverse();
    const Eigen::MatrixXd u = es.eigenvectors().rowwise().reverse();
    vectors.resize(dim, n);
    for (Eigen::Index k = 0; k < n; ++k) {
      // Gram eigenvector u maps to the covariance eigenvector X^T u / sqrt((n-1) s).
      if (values[k] > kRankEpsilon) {
        vectors.col(k) = x.transpose() * u.col(k) / std::sqrt(denom * values[k]);
      } else {
        vectors.col(k).setZero();
      }
    }
  } else {
    Eigen::MatrixXd cov = (x.transpose() * x) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw NumericalError("fit_ssm: eigensolver failed");
    values = es.eigenvalues().reverse();
    vectors = es.eigenvectors().rowwise().reverse();
  }

  int available = 0;
  while (available < values.size() && values[available] > kRankEpsilon) ++available;
  if (available == 0) throw NumericalError("fit_ssm: covariance has zero rank (all inputs identical)");
  const int kept = std::min(q, available);

  PartSSM ssm;
  ssm.category = parts[0].category;
  ssm.points_per_part = static_cast<int>(p);
  ssm.mean = mean;
  ssm.basis = vectors.leftCols(kept);
  ssm.eigenvalues = values.head(kept);
  for (int k = 0; k < kept; ++k) canonicalize_sign(ssm.basis.col(k));

  if (info) {
    info->requested_q = q;
    info->retained_q = kept;
    info->sample_count = static_cast<int>(n);
    info->total_variance = x.squaredNorm() / denom;
    info->discarded_variance = info->total_variance - ssm.eigenvalues.sum();
    info->spectrum.assign(values.data(), values.data() + available);
    info->clamped = kept < q;
  }
  return ssm;
}

GeometryLatent encode_part(const PartSSM& ssm, const CorrespondedCloud& cloud) {
  if (static_cast<int>(cloud.points.size()) != ssm.points_per_part) {
    throw ValidationError("encode_part: cloud has " + std::to_string(cloud.points.size()) + " points, model expects " +
                          std::to_string(ssm.points_per_part));
  }
  const Eigen::VectorXd centered = flatten(cloud.points) - ssm.mean;
  return (ssm.basis.transpose() * centered).cwiseQuotient(ssm.eigenvalues.cwiseSqrt());
}

CorrespondedCloud decode_part(const PartSSM& ssm, const GeometryLatent& z) {
  if (z.size() != ssm.q()) {
    throw ValidationError("decode_part: latent has " + std::to_string(z.size()) + " dims, model expects " +
                          std::to_string(ssm.q()));
  }
  const Eigen::VectorXd x = ssm.mean + ssm.basis * z.cwiseProduct(ssm.eigenvalues.cwiseSqrt());
  return {ssm.category, unflatten(x)};
}

namespace {

struct NormalSystem {
  Eigen::MatrixXd normal;
  Eigen::VectorXd rhs;
};

NormalSystem assemble(const PartSSM& ssm, const Eigen::MatrixXd& b, std::span<const Point3> observed,
                      const std::vector<std::size_t>& assignment, double ridge) {
  const int q = ssm.q();
  NormalSystem sys{Eigen::MatrixXd::Identity(q, q) * ridge, Eigen::VectorXd::Zero(q)};
  for (std::size_t j = 0; j < observed.size(); ++j) {
    const auto row = static_cast<Eigen::Index>(3 * assignment[j]);
    const auto block = b.middleRows(row, 3);
    const Eigen::Vector3d target(observed[j].x - ssm.mean[row], observed[j].y - ssm.mean[row + 1],
                                 observed[j].z - ssm.mean[row + 2]);
    sys.normal.noalias() += block.transpose() * block;
    sys.rhs.noalias() += block.transpose() * target;
  }
  return sys;
}

bool singular(const Eigen::MatrixXd& normal) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(normal, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return !(ev.minCoeff() > 1e-12 * std::max(1.0, ev.maxCoeff()));
}

double objective(const PartSSM& ssm, const Eigen::MatrixXd& b, std::span<const Point3> observed,
                 const std::vector<std::size_t>& assignment, const GeometryLatent& z, double ridge) {
  const Eigen::VectorXd decoded = ssm.mean + b * z;
  double data = 0.0;
  for (std::size_t j = 0; j < observed.size(); ++j) {
    const auto row = static_cast<Eigen::Index>(3 * assignment[j]);
    data += squared_distance(observed[j], {decoded[row], decoded[row + 1], decoded[row + 2]});
  }
  return data + ridge * z.squaredNorm();
}

// One ICP run. `first` seeds the first solve; later assignments are nearest
// template indices on the current decoded shape. Rank-deficient intermediate
// systems take the minimum-norm solution; a singular system at the fixed
// point is an error when ridge = 0.
LatentFit icp_run(const PartSSM& ssm, const Eigen::MatrixXd& b, std::span<const Point3> observed, double ridge,
                  int max_iterations, const GeometryLatent& z0, std::vector<std::size_t> first) {
  LatentFit fit;
  fit.z = z0;
  std::vector<std::size_t> assignment = std::move(first);
  if (assignment.empty()) {
    const KdTree tree(unflatten(ssm.mean + b * z0));
    assignment.resize(observed.size());
    for (std::size_t j = 0; j < observed.size(); ++j) assignment[j] = tree.nearest(observed[j]).index;
  }
  std::vector<std::size_t> previous;
  bool last_singular = false;
  for (int iter = 0; iter < max_iterations; ++iter) {
    if (iter > 0) {
      const KdTree tree(unflatten(ssm.mean + b * fit.z));
      for (std::size_t j = 0; j < observed.size(); ++j) assignment[j] = tree.nearest(observed[j]).index;
    }
    if (assignment == previous) {
      fit.converged = true;
      break;
    }
    const NormalSystem sys = assemble(ssm, b, observed, assignment, ridge);
    last_singular = singular(sys.normal);
    if (last_singular) {
      fit.z = sys.normal.completeOrthogonalDecomposition().solve(sys.rhs);
    } else {
      fit.z = sys.normal.ldlt().solve(sys.rhs);
    }
    fit.objective.push_back(objective(ssm, b, observed, assignment, fit.z, ridge));
    fit.iterations = iter + 1;
    previous = assignment;
  }
  if (last_singular) throw NumericalError("fit_latent_least_squares: singular normal equations; use ridge > 0");
  return fit;
}

}  // namespace

LatentFit fit_latent_least_squares(const PartSSM& ssm, std::span<const Point3> observed, double ridge,
                                   int max_iterations) {
  require_valid_cloud(observed, "fit_latent_least_squares");
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw ValidationError("fit_latent_least_squares: ridge must be >= 0");
  if (max_iterations < 1) throw ValidationError("fit_latent_least_squares: max_iterations must be >= 1");

  const Eigen::MatrixXd b = ssm.scaled_basis();
  const int q = ssm.q();
  struct Start {
    GeometryLatent z;
    std::vector<std::size_t> assignment;  // empty: nearest on decode(z)
  };
  // ICP stalls in local minima on partial observations. Run it from the mean,
  // from +-kStartRadius on every principal axis and from fixed prior draws,
  // and keep the lowest objective.
  std::vector<Start> starts{{GeometryLatent::Zero(q), {}}};
  for (int k = 0; k < q; ++k) {
    for (double sign : {1.0, -1.0}) {
      starts.push_back({GeometryLatent::Unit(q, k) * (sign * kStartRadius), {}});
    }
  }
  Rng rng(kStartSeed);
  for (int i = 0; i < kRandomStarts; ++i) {
    GeometryLatent z(q);
    for (int k = 0; k < q; ++k) z(k) = rng.normal();
    starts.push_back({z, {}});
  }
  // A cloud with exactly p points may be a full part in template order.
  if (observed.size() == static_cast<std::size_t>(ssm.points_per_part)) {
    std::vector<std::size_t> identity(observed.size());
    for (std::size_t j = 0; j < identity.size(); ++j) identity[j] = j;
    starts.push_back({GeometryLatent::Zero(q), std::move(identity)});
  }
  std::optional<LatentFit> best;
  for (auto& start : starts) {
    try {
      LatentFit run = icp_run(ssm, b, observed, ridge, max_iterations, start.z, std::move(start.assignment));
      if (!best || run.objective.back() < best->objective.back()) best = std::move(run);
    } catch (const NumericalError&) {
    }
  }
  if (!best) throw NumericalError("fit_latent_least_squares: singular normal equations; use ridge > 0");
  LatentFit fit = std::move(*best);
  if (!fit.z.allFinite()) throw NumericalError("fit_latent_least_squares: non-finite solution");

  // Residual under the final nearest assignment.
  const KdTree tree(unflatten(ssm.mean + b * fit.z));
  fit.assignment.resize(observed.size());
  double acc = 0.0;
  for (std::size_t j = 0; j < observed.size(); ++j) {
    const auto nn = tree.nearest(observed[j]);
    fit.assignment[j] = nn.index;
    acc += nn.squared_distance;
  }
  fit.residual = acc / static_cast<double>(observed.size());
  return fit;
}

std::vector<std::uint8_t> encode_ssm_binary(const PartSSM& ssm) {
  ssm.validate();
  ByteWriter w;
  w.put_bytes(kSsmMagic);
  w.put(kSsmVersion);
  w.put(static_cast<std::uint32_t>(ssm.category));
  w.put(static_cast<std::uint32_t>(ssm.points_per_part));
  w.put(static_cast<std::uint32_t>(ssm.q()));
  for (Eigen::Index i = 0; i < ssm.mean.size(); ++i) w.put(ssm.mean[i]);
  for (Eigen::Index c = 0; c < ssm.basis.cols(); ++c) {
    for (Eigen::Index r = 0; r < ssm.basis.rows(); ++r) w.put(ssm.basis(r, c));
  }
  for (Eigen::Index i = 0; i < ssm.eigenvalues.size(); ++i) w.put(ssm.eigenvalues[i]);
  return std::move(w.bytes());
}

PartSSM decode_ssm_binary(std::span<const std::uint8_t> bytes, const std::string& what) {
  ByteReader r(bytes, what);
  const auto magic = r.get_bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kSsmMagic.begin())) throw CorruptFileError(what + ": bad magic");
  if (r.get<std::uint32_t>() != kSsmVersion) throw ConfigMismatchError(what + ": unsupported SSM version");
  PartSSM ssm;
  ssm.category = static_cast<int>(r.get<std::uint32_t>());
  ssm.points_per_part = static_cast<int>(r.get<std::uint32_t>());
  const auto q = static_cast<Eigen::Index>(r.get<std::uint32_t>());
  const Eigen::Index dim = 3 * static_cast<Eigen::Index>(ssm.points_per_part);
  if (r.remaining() < static_cast<std::size_t>(8 * (dim + dim * q + q))) throw CorruptFileError(what + ": truncated");
  ssm.mean.resize(dim);
  for (Eigen::Index i = 0; i < dim; ++i) ssm.mean[i] = r.get<double>();
  ssm.basis.resize(dim, q);
  for (Eigen::Index c = 0; c < q; ++c) {
    for (Eigen::Index row = 0; row < dim; ++row) ssm.basis(row, c) = r.get<double>();
  }
  ssm.eigenvalues.resize(q);
  for (Eigen::Index i = 0; i < q; ++i) ssm.eigenvalues[i] = r.get<double>();
  try {
    ssm.validate();
  } catch (const ValidationError& e) {
    throw CorruptFileError(what + ": " + e.what());
  }
  return ssm;
}

void save_ssm(const PartSSM& ssm, const std::filesystem::path& path) { write_file_bytes(path, encode_ssm_binary(ssm)); }

PartSSM load_ssm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  auto ssm = decode_ssm_binary(bytes, path.string());
  return ssm;
}

}  // namespace shapeset
