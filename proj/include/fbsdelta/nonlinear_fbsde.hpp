#pragma once

// Nonlinear forward-backward stochastic difference equations with scalar W:
//
//   dX_t = b(t, X_t, Y_t, Z_t) + sigma(t, X_t, Y_t, Z_t) dW_t,   X_0 = x0,
//   dY_t = -f(t+1, X_{t+1}, Y_{t+1}, Z_{t+1}) + Z_t dW_t + dN_t, Y_T = h(X_T),
//
// solved by continuation in a parameter alpha from the linear system
//
//   b0 = -beta2 G^T y,  sigma0 = -beta2 G^T z,  f0 = beta1 G x,  h0 = G x
//
// (alpha = 0) to the target (alpha = 1). A level-alpha problem with extra
// inhomogeneous data psi equals the alpha = 0 problem with data
// psi + alpha * Phi(U), where Phi(U) = (beta2 G^T y + b, beta2 G^T z + sigma,
// -beta1 G x + f, -G x + h) is evaluated along U = (X, Y, Z). Advancing from
// level a to a + delta is a fixed-point iteration of the level-a solver.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fbsdelta/fbsde_solution.hpp"
#include "fbsdelta/filtration.hpp"
#include "fbsdelta/linear_fbsde.hpp"

namespace fbsdelta {

struct NonlinearModel {
  /// b and sigma for t in [0, T-1]; f for t in [1, T], called with z = 0 at T.
  using CoefficientFn =
      std::function<Vector(int t, const Vector& x, const Vector& y, const Vector& z, NodeRef node)>;
  using TerminalFn = std::function<Vector(const Vector& x, NodeRef leaf)>;

  int m = 1;
  int n = 1;
  CoefficientFn b;
  CoefficientFn sigma;
  CoefficientFn f;
  TerminalFn h;
  Matrix G;  ///< n x m, full rank
  double beta1 = 0.0;
  double beta2 = 0.0;
  std::optional<double> lipschitz_c;
  Vector x0;

  /// Dimensions, G rank and the sign constraints on beta1, beta2. Throws
  /// StructuralError / ValidationError.
  void validate() const;
};

/// The blended coefficients at level alpha. Throws ValidationError unless
/// 0 <= alpha <= 1.
NonlinearModel homotopy_coefficients(const NonlinearModel& model, double alpha);

/// Homogeneous coefficients of the alpha = 0 system on a horizon.
LinearHomogeneous anchor_homogeneous(const NonlinearModel& model, int horizon);

enum class WarmStart {
  kPreviousStage,  ///< start each stage from the last accepted stage solution
  kAnchor,         ///< always start from the alpha = 0 solution
  kZero,           ///< always start from zero processes
};

struct ContinuationConfig {
  double delta_init = 0.5;
  double delta_min = 1.0 / 1024.0;
  double picard_tol = 1e-10;  ///< on the square root of the weighted distance
  int picard_max_iters = 200;
  int inner_recursion_depth_cap = 2;
  WarmStart warm_start = WarmStart::kPreviousStage;

  int monotone_samples = 1000;
  double monotone_box = 5.0;
  double monotone_tolerance = 1e-9;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StageRecord {
  double alpha = 0.0;
  double delta = 0.0;
  int iterations = 0;
  std::vector<double> distances;       ///< sqrt of the weighted distance per iteration
  std::vector<double> rejected_deltas;  ///< attempts that failed before this stage
  double residual = 0.0;                ///< max residual against the level-alpha system
};

struct ContinuationTrace {
  std::vector<StageRecord> stages;  ///< stage 0 is the linear anchor
  bool assumption_verified = false;
  std::string assumption_note;

  std::string describe() const;
};

class ContinuationFailed : public Error {
 public:
  ContinuationFailed(const std::string& message, ContinuationTrace trace);

  const ContinuationTrace& trace() const { return trace_; }

 private:
  ContinuationTrace trace_;
};

struct ContinuationResult {
  FbsdeSolution solution;
  ContinuationTrace trace;
};

/// Throws ContinuationFailed when the step falls below delta_min, NotSolvable
/// if the anchor is singular, StructuralError / ValidationError on bad input
/// (including an f that visibly depends on z at T).
ContinuationResult solve_continuation(const NonlinearModel& model, const ProbabilityTree& tree,
                                      const ContinuationConfig& config = {});

/// Largest |f(T, x, y, z1) - f(T, x, y, z2)| over random samples in [-box, box].
double terminal_z_dependence(const NonlinearModel& model, const ProbabilityTree& tree, int samples,
                             std::uint64_t seed, double box = 5.0);

/// N with N_0 = 0 from dN_t = Y_{t+1} + f(t+1, .) - Y_t - Z_t dW_t.
AdaptedProcess reconstruct_martingale(const NonlinearModel& model, const ProbabilityTree& tree,
                                      const AdaptedProcess& X, const AdaptedProcess& Y,
                                      const AdaptedProcess& Z);

FbsdeResidualReport nonlinear_residual(const NonlinearModel& model, const ProbabilityTree& tree,
                                       const FbsdeSolution& sol);

/// Sampled test of the monotone conditions. Margins are oriented so that the
/// condition holds iff margin >= -tolerance.
struct MonotoneOptions {
  int samples = 10000;
  double box = 5.0;
  double tolerance = 1e-9;
  std::uint64_t seed = 0;
};

struct MonotoneReport {
  bool ok = true;
  double worst_margin = 0.0;
  std::string worst_condition;  ///< "interior", "initial", "final" or "terminal"
  int worst_t = 0;
  Vector worst_lambda;
  Vector worst_lambda_prime;
  int samples = 0;

  std::string describe() const;
};

/// interior (t in 1..T-1): -<A(t,l)-A(t,l'), l-l'> - beta1|G dx|^2 - beta2|G^T dy|^2 - beta2|G^T dz|^2
/// initial (t = 0): the same with only the b and sigma blocks
/// final (t = T): <G^T (f(T,l)-f(T,l')), dx> - beta1|G dx|^2, taken with y = h(x)
/// terminal: <h(x)-h(x'), G dx>
MonotoneReport check_monotone(const NonlinearModel& model, const ProbabilityTree& tree,
                              const MonotoneOptions& options = {});

/// Both sides of the summation-by-parts identity
///   E<G dX_T, dY_T> = E[ sum <G dX_{t+1}, -df(t+1)> + sum <G dsigma(t), dZ_t> + sum <G db(t), dY_t> ]
/// for two solutions a, b with dX_0 = 0. `model_b` supplies the coefficients of b.
struct DualityReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double gap() const { return lhs - rhs; }
};

DualityReport duality_identity(const NonlinearModel& model_a, const FbsdeSolution& a,
                               const NonlinearModel& model_b, const FbsdeSolution& b,
                               const ProbabilityTree& tree);

}  // namespace fbsdelta
