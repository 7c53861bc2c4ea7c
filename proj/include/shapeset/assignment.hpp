#pragma once

#include <Eigen/Dense>
#include <vector>

namespace shapeset {

struct Assignment {
  std::vector<int> column_of_row;  // row i is matched to column column_of_row[i]
  double cost = 0.0;               // total cost of the matching
};

/// Exact minimum-cost perfect matching on a square cost matrix
/// (Hungarian method with potentials, O(n^3)).
Assignment solve_assignment(const Eigen::MatrixXd& cost);

/// Exhaustive search over all permutations; test oracle for n <= 8.
Assignment brute_force_assignment(const Eigen::MatrixXd& cost);

struct SinkhornOptions {
  double epsilon = 0.002;    // final entropic regularization, in units of the mean cost entry
  int max_iterations = 200;  // per epsilon phase
  double tolerance = 1e-9;   // max marginal violation, relative to the uniform mass
};

/// Entropic optimal transport with uniform marginals: log-domain Sinkhorn,
/// annealed from epsilon = mean cost down to the target by halving, then
/// rounded to a feasible coupling. Returns <P, C> * n, an upper bound on the
/// assignment cost of the same matrix.
double sinkhorn_cost(const Eigen::MatrixXd& cost, const SinkhornOptions& options = {});

}  // namespace shapeset
