#include "fbsdelta/fbsde_solution.hpp"

#include <algorithm>
#include <sstream>

namespace fbsdelta {

double FbsdeResidualReport::max() const {
  return std::max({forward, backward, initial, terminal, martingale, orthogonality});
}

std::string FbsdeResidualReport::describe() const {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << "forward=" << forward << " backward=" << backward << " initial=" << initial
     << " terminal=" << terminal << " martingale=" << martingale << " orthogonality=" << orthogonality;
  return os.str();
}

double state_distance(const FbsdeSolution& a, const FbsdeSolution& b) {
  return std::max({sup_distance(a.X, b.X), sup_distance(a.Y, b.Y), sup_distance(a.Z, b.Z)});
}

double solution_distance(const FbsdeSolution& a, const FbsdeSolution& b) {
  return std::max(state_distance(a, b), sup_distance(a.N, b.N));
}

}  // namespace fbsdelta
