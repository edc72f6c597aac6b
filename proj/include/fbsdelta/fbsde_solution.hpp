#pragma once

#include <string>

#include "fbsdelta/filtration.hpp"

namespace fbsdelta {

/// Max pathwise residuals of the four defining relations plus the
/// martingale / orthogonality residuals of N.
struct FbsdeResidualReport {
  double forward = 0.0;
  double backward = 0.0;
  double initial = 0.0;
  double terminal = 0.0;
  double martingale = 0.0;
  double orthogonality = 0.0;

  double max() const;
  std::string describe() const;
};

/// Quadruple (X, Y, Z, N) with W one-dimensional.
struct FbsdeSolution {
  AdaptedProcess X;  ///< (m, 1) on [0, T]
  AdaptedProcess Y;  ///< (n, 1) on [0, T]
  AdaptedProcess Z;  ///< (n, 1) on [0, T-1]
  AdaptedProcess N;  ///< (n, 1) on [0, T]
  FbsdeResidualReport residuals;
};

/// Largest sup-norm distance over X, Y, Z and N.
double solution_distance(const FbsdeSolution& a, const FbsdeSolution& b);
/// Same, ignoring N.
double state_distance(const FbsdeSolution& a, const FbsdeSolution& b);

}  // namespace fbsdelta
