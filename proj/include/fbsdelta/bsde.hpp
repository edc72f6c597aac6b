#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "fbsdelta/filtration.hpp"

namespace fbsdelta {

/// Generator f(t, y, z) of the backward equation
///
///   dY_t = -f(t+1, Y_{t+1}, Z_{t+1}) + Z_t dW_t + dN_t,   Y_T = eta,
///
/// for t in {1, ..., T}. At t = T the value must not depend on z; the solver
/// always passes z = 0 there.
struct Generator {
  using Fn = std::function<Vector(int t, const Vector& y, const Matrix& z, NodeRef node)>;

  int n = 1;
  int d = 1;
  Fn eval;
  bool terminal_z_independent = true;
  std::optional<double> lipschitz_c1;
  std::optional<double> lipschitz_c2;

  static Generator zero(int n, int d);
};

struct BsdeSolution {
  AdaptedProcess Y;  ///< (n, 1) on [0, T]
  AdaptedProcess Z;  ///< (n, d) on [0, T-1]
  AdaptedProcess N;  ///< (n, 1) on [0, T], N_0 = 0
};

/// Backward recursion Y_t = E[lambda_{t+1} | F_t], Z_t = E[lambda_{t+1} dW_t^* | F_t]
/// with lambda_{t+1} = Y_{t+1} + f(t+1, Y_{t+1}, Z_{t+1}); dN_t is the part of
/// lambda_{t+1} orthogonal to the increment. Throws ValidationError when the
/// generator is not declared z-independent at T, StructuralError on shape
/// mismatches.
BsdeSolution solve_bsde(const ProbabilityTree& tree, const Generator& gen, const AdaptedProcess& eta);

struct BsdeResidualReport {
  double equation = 0.0;       ///< pathwise residual of the difference equation
  double terminal = 0.0;       ///< |Y_T - eta|
  double initial_n = 0.0;      ///< |N_0|
  double martingale = 0.0;     ///< N martingale residual
  double orthogonality = 0.0;  ///< E[dN dW^* | F] residual

  double max() const;
};

BsdeResidualReport bsde_residual(const ProbabilityTree& tree, const Generator& gen,
                                 const AdaptedProcess& eta, const BsdeSolution& sol);

/// Expected energies of a solution. The a priori estimate sums |Y_t|^2 over
/// t = 0..T-1; `y_energy_with_terminal` also includes t = T.
struct BsdeEnergy {
  double y_energy = 0.0;
  double y_energy_with_terminal = 0.0;
  double z_energy = 0.0;
  double dn_energy = 0.0;

  double total() const { return y_energy + z_energy + dn_energy; }
};

BsdeEnergy bsde_energy(const ProbabilityTree& tree, const BsdeSolution& sol);
/// Energy of the difference of two solutions on the same tree.
BsdeEnergy bsde_energy_difference(const ProbabilityTree& tree, const BsdeSolution& a,
                                  const BsdeSolution& b);

/// Largest |f(T, y, z1) - f(T, y, z2)| over random samples in [-box, box].
double terminal_z_dependence(const ProbabilityTree& tree, const Generator& gen, int samples,
                             std::uint64_t seed, double box = 5.0);

/// Sampled check of the declared Lipschitz constants. Returns the largest
/// excess |f1 - f2| - (c1 |dy| + c2 ||dz||_F); positive means refuted. Missing
/// constants count as zero.
double lipschitz_spot_check(const ProbabilityTree& tree, const Generator& gen, int samples,
                            std::uint64_t seed, double box = 5.0);

}  // namespace fbsdelta
