#pragma once

// Self-consistent tabular solvers for the IB and CEB Lagrangians on a finite
// joint p(x, y). CEB at rho is IB at beta = exp(rho) + 1; both minimize
// I(X;Z) - beta I(Y;Z) by alternating
//   q(z|x) ~ q(z) exp(-beta KL[p(y|x) || q(y|z)]),
//   q(z) = sum_x p(x) q(z|x),  q(y|z) = sum_x p(x,y) q(z|x) / q(z).

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ceb/info.hpp"

namespace ceb {

struct SolveStep {
  double i_xz = 0;
  double i_yz = 0;
  double objective = 0;
};

struct SolveTrace {
  std::vector<SolveStep> steps;  // steps[0] is the initial encoder
  bool converged = false;
  int iterations = 0;
  double last_change = 0;  // max |q_new(z|x) - q_old(z|x)| of the final sweep
};

struct SolveResult {
  EncoderTable<double> encoder;
  SolveTrace trace;
};

struct SolveOptions {
  double tol = 1e-8;
  int max_iters = 10000;
};

inline double beta_from_rho(double rho) { return std::exp(rho) + 1.0; }
inline double gamma_from_rho(double rho) { return std::exp(rho); }

SolveResult ib_solve(const DiscreteJoint<double>& joint, double beta, const EncoderTable<double>& init,
                     const SolveOptions& options = {});

SolveResult ceb_solve(const DiscreteJoint<double>& joint, double rho, const EncoderTable<double>& init,
                      const SolveOptions& options = {});

/// Row-stochastic table with rows drawn from a symmetric Dirichlet(1).
EncoderTable<double> random_encoder(Eigen::Index x_cardinality, Eigen::Index z_cardinality,
                                    std::mt19937_64& rng);

/// One application of the self-consistent update; exposed for tests that
/// check the fixed-point property directly.
Mat<double> self_consistent_update(const DiscreteJoint<double>& joint, double beta, const Mat<double>& encoder);

enum class TabularObjective { IB, CEB };

TabularObjective parse_tabular_objective(const std::string& name);

struct PlanePoint {
  double rho = 0;
  double i_xz = 0;
  double i_yz = 0;
  double objective = 0;
  bool converged = false;
  bool failed = false;
  std::string error;

  double residual() const { return i_xz - i_yz; }
};

struct SweepOptions {
  int restarts = 10;
  std::uint64_t seed = 0;
  int z_cardinality = 0;  // 0 selects |Y|
  SolveOptions solve;
};

/// One point per rho; each is the best of `restarts` Dirichlet inits by
/// objective value (ties go to the lower restart index). Solver failures mark
/// the point failed instead of aborting the sweep.
std::vector<PlanePoint> plane_sweep(const DiscreteJoint<double>& joint, const std::vector<double>& rhos,
                                    TabularObjective objective, const SweepOptions& options);

/// Deterministic per-(seed, point, restart) stream seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace ceb
