#pragma once

// Linear forward-backward stochastic difference equations driven by a scalar
// martingale W:
//
//   dX_t = A_t X_t + B_t Y_t + C_t Z_t + D_t
//          + (Abar_t X_t + Bbar_t Y_t + Cbar_t Z_t + Dbar_t) dW_t,
//   dY_t = Ahat_{t+1} X_{t+1} + Bhat_{t+1} Y_{t+1} + Chat_{t+1} Z_{t+1} + Dhat_{t+1}
//          + Z_t dW_t + dN_t,
//   X_0 = x0,   Y_T = G X_T + g.
//
// The homogeneous coefficients are deterministic; D, Dbar, Dhat and g may be
// arbitrary adapted processes. Solvability is decided by the invertibility of
//
//   Gamma_t(P_{t+1}) = I - [ B_t P_{t+1}     C_t P_{t+1}
//                            Bbar_t P_{t+1}  Cbar_t P_{t+1} ]
//
// along the backward matrix recursion P_T = -Ahat_T + (I - Bhat_T) G,
// P_t = -Ahat_t + (I - Bhat_t) G_t - Chat_t H_t. When every Gamma_t is
// invertible, Y_t = P_{t+1} E[X_{t+1}|F_t] + E[p_{t+1}|F_t] decouples the system
// and it is solved forward one 2m-dimensional linear system per node.

#include <optional>
#include <vector>

#include "fbsdelta/fbsde_solution.hpp"
#include "fbsdelta/filtration.hpp"

namespace fbsdelta {

inline constexpr double kSingularThreshold = 1e-10;

/// Deterministic coefficients. A..Cbar are indexed by t in [0, T-1]; Ahat,
/// Bhat, Chat by t in [1, T] (slot 0 is unused and kept empty).
struct LinearHomogeneous {
  int m = 1;
  int n = 1;
  int horizon = 1;
  std::vector<Matrix> A, Abar;        // m x m
  std::vector<Matrix> B, Bbar;        // m x n
  std::vector<Matrix> C, Cbar;        // m x n
  std::vector<Matrix> Ahat;           // n x m
  std::vector<Matrix> Bhat, Chat;     // n x n
  Matrix G;                           // n x m

  /// All coefficients zero, G zero.
  static LinearHomogeneous zeros(int m, int n, int horizon);

  /// Shapes, Chat_T = 0 and full rank of G. Throws StructuralError /
  /// ValidationError.
  void validate() const;
};

struct LinearInhomogeneous {
  AdaptedProcess D;     // (m, 1) on [0, T-1]
  AdaptedProcess Dbar;  // (m, 1) on [0, T-1]
  AdaptedProcess Dhat;  // (n, 1) on [1, T]
  AdaptedProcess g;     // (n, 1) at T
  Vector x0;

  static LinearInhomogeneous zeros(const ProbabilityTree& tree, int m, int n);
  void validate(const ProbabilityTree& tree, int m, int n) const;
};

struct LinearCoefficients {
  LinearHomogeneous hom;
  LinearInhomogeneous inhom;

  int m() const { return hom.m; }
  int n() const { return hom.n; }
  void validate(const ProbabilityTree& tree) const;
};

struct GammaReport {
  int t = 0;
  Matrix gamma;
  double min_singular_value = 0.0;
  bool invertible = false;
};

/// Per-time invertibility of Gamma_t, in increasing t. If some Gamma_t is
/// singular the backward sweep stops there and earlier times are absent.
struct SolvabilityReport {
  std::vector<GammaReport> steps;
  std::optional<int> failed_at;

  bool solvable() const { return !failed_at.has_value(); }
};

/// Reads only the homogeneous coefficients.
SolvabilityReport check_solvability(const LinearHomogeneous& hom,
                                    double threshold = kSingularThreshold);
SolvabilityReport check_solvability(const LinearCoefficients& coeffs, const ProbabilityTree& tree,
                                    double threshold = kSingularThreshold);

struct RiccatiSequence {
  std::vector<Matrix> P;  ///< slots 1..T; slots at or below a failure stay empty
  AdaptedProcess p;       ///< (n, 1) on [1, T]; zero below a failure
  std::vector<GammaReport> gamma_reports;
  std::optional<int> failed_at;
  /// max |P_t(G_t, H_t form) - P_t(closed display)| over the computed t.
  double display_consistency = 0.0;

  bool solvable() const { return !failed_at.has_value(); }
};

/// Backward sweep for (P_t, p_t). Never throws on singularity: the sequence up
/// to the failing time is returned with `failed_at` set.
RiccatiSequence riccati_backward(const LinearCoefficients& coeffs, const ProbabilityTree& tree,
                                 double threshold = kSingularThreshold);

/// Solver bound to fixed homogeneous coefficients; Gamma_t is factorised once
/// and reused for every node and every inhomogeneous right-hand side.
class LinearSolver {
 public:
  /// Throws NotSolvable when some Gamma_t is singular.
  LinearSolver(LinearHomogeneous hom, ProbabilityTree tree, double threshold = kSingularThreshold);

  const LinearHomogeneous& homogeneous() const { return hom_; }
  const ProbabilityTree& tree() const { return tree_; }
  const SolvabilityReport& solvability() const { return report_; }
  const std::vector<Matrix>& P() const { return P_; }

  /// p_t on [1, T] for the given inhomogeneous data.
  AdaptedProcess offsets(const LinearInhomogeneous& inhom) const;

  /// X, Y, Z forward, N as the orthogonal remainder of the backward equation;
  /// residuals are filled in.
  FbsdeSolution solve(const LinearInhomogeneous& inhom) const;

  /// Same as solve() without computing the residual report.
  FbsdeSolution solve_unchecked(const LinearInhomogeneous& inhom) const;

 private:
  LinearHomogeneous hom_;
  ProbabilityTree tree_;
  SolvabilityReport report_;
  std::vector<Matrix> P_;
  std::vector<Eigen::PartialPivLU<Matrix>> gamma_lu_;  // slot t in [0, T-1]
};

/// Throws NotSolvable (first failing t) when the system is not uniquely
/// solvable.
FbsdeSolution solve_linear(const LinearCoefficients& coeffs, const ProbabilityTree& tree,
                           double threshold = kSingularThreshold);

FbsdeResidualReport linear_residual(const LinearCoefficients& coeffs, const ProbabilityTree& tree,
                                    const FbsdeSolution& sol);

/// Residual of the 2m-dimensional system for (E[X_{t+1}|F_t], E[X_{t+1} dW_t|F_t])
/// taken from `X`, with p from `riccati`; max over t and nodes.
double algebraic_system_residual(const LinearCoefficients& coeffs, const ProbabilityTree& tree,
                                 const RiccatiSequence& riccati, const AdaptedProcess& X);

/// max over t, nodes of |Y_t - P_{t+1}E[X_{t+1}|F_t] - E[p_{t+1}|F_t]| and the Z analogue.
double decoupling_residual(const ProbabilityTree& tree, const RiccatiSequence& riccati,
                           const FbsdeSolution& sol);

}  // namespace fbsdelta
