#include "shapeset/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "shapeset/error.hpp"
#include "shapeset/rng.hpp"

namespace shapeset {

namespace {

void require_nonempty(std::span<const Point3> c, const char* what) {
  if (c.empty()) throw ValidationError(std::string(what) + ": empty point cloud");
}

template <typename F>
double mean_nearest(std::span<const Point3> from, std::span<const Point3> to, F&& transform) {
  double total = 0.0;
  if (to.size() <= 64) {
    for (const auto& p : from) total += transform(nearest_neighbor_scan(p, to).squared_distance);
  } else {
    const KdTree tree(to);
    for (const auto& p : from) total += transform(tree.nearest(p).squared_distance);
  }
  return total / static_cast<double>(from.size());
}

// Index of the smallest entry in row i among columns [begin, end), skipping
// `skip`; ties go to the lowest index.
std::size_t argmin_row(const Eigen::MatrixXd& d, std::size_t i, std::size_t begin, std::size_t end, std::size_t skip) {
  std::size_t best = end;
  double best_value = std::numeric_limits<double>::infinity();
  for (std::size_t j = begin; j < end; ++j) {
    if (j == skip) continue;
    const double v = d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    if (v < best_value || best == end) {
      best_value = v;
      best = j;
    }
  }
  return best;
}

void check_sets(const Eigen::MatrixXd& d, std::size_t gen_count) {
  if (d.rows() != d.cols()) throw ValidationError("metrics: distance matrix must be square");
  if (gen_count == 0 || gen_count >= static_cast<std::size_t>(d.rows())) {
    throw ValidationError("metrics: generated and reference sets must both be nonempty");
  }
}

std::vector<PointCloud> joined(std::span<const PointCloud> gen, std::span<const PointCloud> ref) {
  if (gen.empty() || ref.empty()) throw ValidationError("metrics: generated and reference sets must both be nonempty");
  std::vector<PointCloud> all(gen.begin(), gen.end());
  all.insert(all.end(), ref.begin(), ref.end());
  return all;
}

}  // namespace

double chamfer(std::span<const Point3> a, std::span<const Point3> b) {
  require_nonempty(a, "chamfer");
  require_nonempty(b, "chamfer");
  auto id = [](double d2) { return d2; };
  return mean_nearest(a, b, id) + mean_nearest(b, a, id);
}

double mean_nearest_distance(std::span<const Point3> from, std::span<const Point3> to) {
  require_nonempty(from, "mean_nearest_distance");
  require_nonempty(to, "mean_nearest_distance");
  return mean_nearest(from, to, [](double d2) { return std::sqrt(d2); });
}

double emd(std::span<const Point3> a, std::span<const Point3> b, EmdMode mode, const SinkhornOptions& sinkhorn) {
  require_nonempty(a, "emd");
  if (a.size() != b.size()) throw ValidationError("emd: point counts differ (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  const auto n = static_cast<Eigen::Index>(a.size());
  Eigen::MatrixXd cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) cost(i, j) = distance(a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(j)]);
  }
  const bool exact = mode == EmdMode::Exact || (mode == EmdMode::Auto && a.size() <= kExactEmdLimit);
  const double total = exact ? solve_assignment(cost).cost : sinkhorn_cost(cost, sinkhorn);
  return total / static_cast<double>(n);
}

Eigen::MatrixXd distance_matrix(std::span<const PointCloud> clouds, CloudDistance kind) {
  const auto n = static_cast<Eigen::Index>(clouds.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  if (kind == CloudDistance::Chamfer) {
    std::vector<KdTree> trees;
    trees.reserve(clouds.size());
    for (const auto& c : clouds) {
      require_nonempty(c, "chamfer");
      trees.emplace_back(c);
    }
    auto one_way = [&](Eigen::Index from, Eigen::Index to) {
      double total = 0.0;
      for (const auto& p : clouds[static_cast<std::size_t>(from)]) total += trees[static_cast<std::size_t>(to)].nearest(p).squared_distance;
      return total / static_cast<double>(clouds[static_cast<std::size_t>(from)].size());
    };
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = one_way(i, j) + one_way(j, i);
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        d(i, j) = d(j, i) = emd(clouds[static_cast<std::size_t>(i)], clouds[static_cast<std::size_t>(j)]);
      }
    }
  }
  return d;
}

double mmd_from_matrix(const Eigen::MatrixXd& d, std::size_t gen_count) {
  check_sets(d, gen_count);
  const auto total = static_cast<std::size_t>(d.rows());
  double sum = 0.0;
  for (std::size_t r = gen_count; r < total; ++r) {
    sum += d.row(static_cast<Eigen::Index>(r)).head(static_cast<Eigen::Index>(gen_count)).minCoeff();
  }
  return sum / static_cast<double>(total - gen_count);
}

double cov_from_matrix(const Eigen::MatrixXd& d, std::size_t gen_count) {
  check_sets(d, gen_count);
  const auto total = static_cast<std::size_t>(d.rows());
  std::vector<char> covered(total - gen_count, 0);
  for (std::size_t g = 0; g < gen_count; ++g) covered[argmin_row(d, g, gen_count, total, total) - gen_count] = 1;
  return static_cast<double>(std::count(covered.begin(), covered.end(), 1)) / static_cast<double>(covered.size());
}

double nna_from_matrix(const Eigen::MatrixXd& d, std::size_t gen_count) {
  check_sets(d, gen_count);
  const auto total = static_cast<std::size_t>(d.rows());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t j = argmin_row(d, i, 0, total, i);
    correct += (i < gen_count) == (j < gen_count);
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

double mmd(std::span<const PointCloud> gen, std::span<const PointCloud> ref, CloudDistance kind) {
  return mmd_from_matrix(distance_matrix(joined(gen, ref), kind), gen.size());
}

double cov(std::span<const PointCloud> gen, std::span<const PointCloud> ref, CloudDistance kind) {
  return cov_from_matrix(distance_matrix(joined(gen, ref), kind), gen.size());
}

double nna(std::span<const PointCloud> gen, std::span<const PointCloud> ref, CloudDistance kind) {
  return nna_from_matrix(distance_matrix(joined(gen, ref), kind), gen.size());
}

PointCloud subsample(std::span<const Point3> cloud, std::size_t count, std::uint64_t seed) {
  require_nonempty(cloud, "subsample");
  if (count == 0) throw ValidationError("subsample: count must be positive");
  if (count >= cloud.size()) return PointCloud(cloud.begin(), cloud.end());
  // Partial Fisher-Yates, then restore the original order of the kept points.
  std::vector<std::size_t> idx(cloud.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  PointCloud out;
  out.reserve(count);
  for (auto i : idx) out.push_back(cloud[i]);
  return out;
}

PointCloud eval_cloud(const SegmentedShape& shape, std::size_t max_points, std::uint64_t seed) {
  PointCloud merged;
  for (const auto& part : shape.parts) merged.insert(merged.end(), part.points.begin(), part.points.end());
  if (merged.empty()) throw ValidationError("eval_cloud: shape '" + shape.id + "' has no parts");
  return subsample(normalize_to_unit_cube(merged).first, max_points, seed);
}

EvalReport evaluate(std::span<const PointCloud> gen, std::span<const PointCloud> ref, const EvalOptions& options) {
  EvalReport report;
  report.gen_count = gen.size();
  report.ref_count = ref.size();
  const auto all = joined(gen, ref);
  const Eigen::MatrixXd dc = distance_matrix(all, CloudDistance::Chamfer);
  report.mmd_cd = mmd_from_matrix(dc, gen.size());
  report.cov_cd = cov_from_matrix(dc, gen.size());
  report.nna_cd = nna_from_matrix(dc, gen.size());
  if (options.with_emd) {
    std::vector<PointCloud> sub;
    for (const auto& c : all) sub.push_back(subsample(c, options.emd_points, options.seed));
    const auto counts = sub.front().size();
    for (const auto& c : sub) {
      if (c.size() != counts) throw ValidationError("evaluate: clouds too small for the requested EMD point count");
    }
    const Eigen::MatrixXd de = distance_matrix(sub, CloudDistance::Emd);
    report.mmd_emd = mmd_from_matrix(de, gen.size());
    report.cov_emd = cov_from_matrix(de, gen.size());
    report.nna_emd = nna_from_matrix(de, gen.size());
    report.has_emd = true;
    report.emd_points = counts;
  }
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["gen_count"] = gen_count;
  j["ref_count"] = ref_count;
  j["chamfer_convention"] = "mean squared nearest-neighbor distance, summed over both directions";
  j["mmd_cd_x1e3"] = mmd_cd * 1e3;
  j["cov_cd"] = cov_cd;
  j["nna_cd"] = nna_cd;
  if (has_emd) {
    j["emd_convention"] = "mean Euclidean cost of the optimal one-to-one matching";
    j["emd_points"] = emd_points;
    j["mmd_emd_x1e2"] = mmd_emd * 1e2;
    j["cov_emd"] = cov_emd;
    j["nna_emd"] = nna_emd;
  }
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << fmt::format("{:<10} {:>12} {:>8} {:>8}\n", "distance", "MMD", "COV", "1-NNA");
  os << fmt::format("{:<10} {:>12.4f} {:>8.4f} {:>8.4f}\n", "CD x1e3", mmd_cd * 1e3, cov_cd, nna_cd);
  if (has_emd) os << fmt::format("{:<10} {:>12.4f} {:>8.4f} {:>8.4f}\n", "EMD x1e2", mmd_emd * 1e2, cov_emd, nna_emd);
  os << fmt::format("gen={} ref={}\n", gen_count, ref_count);
  return os.str();
}

}  // namespace shapeset
