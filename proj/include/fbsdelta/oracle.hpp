#pragma once

// Brute-force reference solver. The whole forward-backward system on a tree is
// written as one square algebraic system over every node value and solved by
// damped Newton with a finite-difference Jacobian. N is eliminated: the
// backward equation is imposed through its two projections
//
//   Y_t = E[Y_{t+1} + f(t+1, .) | F_t],   Z_t = E[(Y_{t+1} + f(t+1, .)) dW_t | F_t]
//
// and N is rebuilt from the orthogonal remainder afterwards.
//
// Unknown layout (node-major inside each block, components innermost):
//   X_t, t = 0..T  |  Y_t, t = 0..T  |  Z_t, t = 0..T-1
// Residual layout:
//   X_0 - x0 | for every node with t < T: the forward equation at each child,
//   then the Y and Z projections | Y_T - h(X_T) at every leaf

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fbsdelta/fbsde_solution.hpp"
#include "fbsdelta/filtration.hpp"
#include "fbsdelta/linear_fbsde.hpp"
#include "fbsdelta/nonlinear_fbsde.hpp"

namespace fbsdelta::oracle {

/// Coefficients in the generic pathwise form used by the oracle.
struct Dynamics {
  using CoefficientFn = NonlinearModel::CoefficientFn;
  using TerminalFn = NonlinearModel::TerminalFn;

  int m = 1;
  int n = 1;
  CoefficientFn b, sigma, f;
  TerminalFn h;
  Vector x0;
  bool affine = false;

  static Dynamics from_model(const NonlinearModel& model);
  static Dynamics from_linear(const LinearCoefficients& coeffs);
};

class ResidualSystem {
 public:
  ResidualSystem(Dynamics dynamics, ProbabilityTree tree);

  std::size_t unknowns() const { return unknowns_; }
  std::size_t residuals() const { return residuals_; }
  bool affine() const { return dyn_.affine; }
  const ProbabilityTree& tree() const { return tree_; }
  const Dynamics& dynamics() const { return dyn_; }

  Vector evaluate(const Vector& v) const;

  /// Forward differences with step fd_step * max(1, |v_j|); affine systems use
  /// a unit step, which is exact for them. `central` switches to central
  /// differences.
  Matrix jacobian(const Vector& v, double fd_step = 1e-7, bool central = false) const;

  Vector pack(const FbsdeSolution& sol) const;
  /// X, Y, Z from the vector; N rebuilt from the backward equation; the
  /// residual report is left for the caller.
  FbsdeSolution unpack(const Vector& v) const;

 private:
  std::size_t x_offset(int t, std::size_t node) const;
  std::size_t y_offset(int t, std::size_t node) const;
  std::size_t z_offset(int t, std::size_t node) const;

  Dynamics dyn_;
  ProbabilityTree tree_;
  std::vector<std::size_t> node_base_;  // nodes before time t
  std::size_t total_nodes_ = 0;
  std::size_t inner_nodes_ = 0;  // nodes with t < T
  std::size_t unknowns_ = 0;
  std::size_t residuals_ = 0;
};

/// Throws StructuralError on dimension mismatches or d != 1.
ResidualSystem build_residual_system(const NonlinearModel& model, const ProbabilityTree& tree);
ResidualSystem build_residual_system(const LinearCoefficients& coeffs, const ProbabilityTree& tree);

struct NewtonConfig {
  int max_iters = 50;
  double tol = 1e-10;  ///< on the sup norm of F
  double armijo_c = 1e-4;
  double min_step = 1e-10;
  double fd_step = 1e-7;
  bool central = false;
};

struct NewtonTrace {
  std::vector<double> residual_sup;  ///< |F|_inf at every iterate, starting point included
  std::vector<double> step_lengths;
  bool converged = false;

  int iterations() const { return static_cast<int>(step_lengths.size()); }
};

class OracleFailed : public Error {
 public:
  OracleFailed(const std::string& message, NewtonTrace trace);
  const NewtonTrace& trace() const { return trace_; }

 private:
  NewtonTrace trace_;
};

struct NewtonResult {
  Vector v;
  NewtonTrace trace;
};

/// Damped Newton with Armijo backtracking on |F|^2. Throws OracleFailed.
NewtonResult solve_global_newton(const ResidualSystem& system, const Vector& start,
                                 const NewtonConfig& config = {});
NewtonResult solve_global_newton(const ResidualSystem& system, const NewtonConfig& config = {});

/// Smallest singular value of the Jacobian at v.
double jacobian_min_singular_value(const ResidualSystem& system, const Vector& v);

/// Convenience: build, solve from zero, unpack.
FbsdeSolution solve(const NonlinearModel& model, const ProbabilityTree& tree, const NewtonConfig& config = {});
FbsdeSolution solve(const LinearCoefficients& coeffs, const ProbabilityTree& tree,
                    const NewtonConfig& config = {});

}  // namespace fbsdelta::oracle
