#include "shapeset/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "shapeset/error.hpp"

namespace shapeset {

namespace {

void check_square(const Eigen::MatrixXd& cost) {
  if (cost.rows() == 0 || cost.rows() != cost.cols()) throw ValidationError("assignment: cost matrix must be square and nonempty");
  if (!cost.allFinite()) throw ValidationError("assignment: cost matrix must be finite");
}

double log_sum_exp(const Eigen::VectorXd& v) {
  const double mx = v.maxCoeff();
  return mx + std::log((v.array() - mx).exp().sum());
}

}  // namespace

Assignment solve_assignment(const Eigen::MatrixXd& cost) {
  check_square(cost);
  const int n = static_cast<int>(cost.rows());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual start.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment out;
  out.column_of_row.assign(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j) out.column_of_row[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  for (int i = 0; i < n; ++i) out.cost += cost(i, out.column_of_row[static_cast<std::size_t>(i)]);
  return out;
}

Assignment brute_force_assignment(const Eigen::MatrixXd& cost) {
  check_square(cost);
  const int n = static_cast<int>(cost.rows());
  if (n > 8) throw ValidationError("brute_force_assignment: n must be <= 8");
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Assignment best;
  best.cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (int i = 0; i < n; ++i) c += cost(i, perm[static_cast<std::size_t>(i)]);
    if (c < best.cost) {
      best.cost = c;
      best.column_of_row = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double sinkhorn_cost(const Eigen::MatrixXd& cost, const SinkhornOptions& options) {
  check_square(cost);
  if (!(options.epsilon > 0.0) || options.max_iterations < 1) throw ValidationError("sinkhorn: invalid options");
  const Eigen::Index n = cost.rows();
  const double scale = std::max(cost.mean(), 1e-300);
  const double target = options.epsilon * scale;
  const double mass = 1.0 / static_cast<double>(n);
  const double log_marginal = std::log(mass);
  // Dual potentials in cost units, so they carry over between epsilon phases.
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n), g = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd tmp(n);
  double eps = std::max(scale, target);
  while (true) {
    for (int it = 0; it < options.max_iterations; ++it) {
      for (Eigen::Index i = 0; i < n; ++i) {
        tmp = (g - cost.row(i).transpose()) / eps;
        f(i) = eps * (log_marginal - log_sum_exp(tmp));
      }
      double violation = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        tmp = (f - cost.col(j)) / eps;
        const double lse = log_sum_exp(tmp);
        violation = std::max(violation, std::abs(std::exp(lse + g(j) / eps) - mass));
        g(j) = eps * (log_marginal - lse);
      }
      if (violation * static_cast<double>(n) < options.tolerance) break;
    }
    if (eps <= target) break;
    eps = std::max(0.5 * eps, target);
  }

  Eigen::MatrixXd plan(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) plan(i, j) = std::exp((f(i) + g(j) - cost(i, j)) / eps);
  }
  // Round onto the feasible couplings: scale rows and columns down to their
  // marginals, then add the missing mass as a rank-one correction. The result
  // is a valid transport plan, so its cost never undercuts the exact one.
  const Eigen::VectorXd row_scale = (mass / plan.rowwise().sum().array()).min(1.0).matrix();
  plan = row_scale.asDiagonal() * plan;
  const Eigen::VectorXd col_scale = (mass / plan.colwise().sum().transpose().array()).min(1.0).matrix();
  plan = plan * col_scale.asDiagonal();
  const Eigen::VectorXd row_gap = (mass - plan.rowwise().sum().array()).matrix();
  const Eigen::VectorXd col_gap = (mass - plan.colwise().sum().transpose().array()).matrix();
  if (row_gap.sum() > 0.0) plan += row_gap * col_gap.transpose() / row_gap.sum();
  return (plan.array() * cost.array()).sum() * static_cast<double>(n);
}

}  // namespace shapeset
