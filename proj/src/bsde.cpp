#include "fbsdelta/bsde.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <string>

namespace fbsdelta {

Generator Generator::zero(int n, int d) {
  Generator g;
  g.n = n;
  g.d = d;
  g.eval = [n](int, const Vector&, const Matrix&, NodeRef) { return Vector::Zero(n).eval(); };
  return g;
}

namespace {

void check_inputs(const ProbabilityTree& tree, const Generator& gen, const AdaptedProcess& eta) {
  const int T = tree.horizon();
  if (!gen.eval) throw StructuralError("generator has no evaluation function");
  if (gen.d != tree.noise_dim()) {
    throw StructuralError("generator expects d=" + std::to_string(gen.d) + " but the tree has d=" +
                          std::to_string(tree.noise_dim()));
  }
  if (!eta.covers(T) || eta.rows() != gen.n || eta.cols() != 1 || eta.node_count(T) != tree.node_count(T)) {
    throw StructuralError("terminal condition must be an (n, 1) process at time T");
  }
}

Vector lambda_at(const Generator& gen, int t, const Vector& y, const Matrix& z, NodeRef node) {
  Vector f = gen.eval(t, y, z, node);
  if (f.size() != gen.n) throw StructuralError("generator returned a vector of the wrong size");
  return y + f;
}

}  // namespace

BsdeSolution solve_bsde(const ProbabilityTree& tree, const Generator& gen, const AdaptedProcess& eta) {
  if (!gen.terminal_z_independent) {
    throw ValidationError("generator must be independent of z at t = T");
  }
  check_inputs(tree, gen, eta);
  const int T = tree.horizon();
  const int n = gen.n;
  const int d = gen.d;

  BsdeSolution sol{AdaptedProcess(tree, 0, T, n, 1), AdaptedProcess(tree, 0, T - 1, n, d),
                   AdaptedProcess(tree, 0, T, n, 1)};
  sol.Y.slice(T) = eta.slice(T);

  // lambda_{t+1} at every node of time t+1, reused for dN.
  std::vector<std::vector<Vector>> lambda(static_cast<std::size_t>(T + 1));
  const Matrix zero_z = Matrix::Zero(n, d);
  for (int t = T - 1; t >= 0; --t) {
    const int s = t + 1;
    auto& lam = lambda[static_cast<std::size_t>(s)];
    lam.resize(tree.node_count(s));
    for (std::size_t node = 0; node < lam.size(); ++node) {
      const Matrix& z = s == T ? zero_z : sol.Z(s, node);
      lam[node] = lambda_at(gen, s, sol.Y(s, node), z, NodeRef{s, node});
    }
    const IncrementDistribution& step = tree.step(t);
    for (std::size_t node = 0; node < tree.node_count(t); ++node) {
      Vector y = Vector::Zero(n);
      Matrix z = Matrix::Zero(n, d);
      for (std::size_t k = 0; k < step.branches(); ++k) {
        const Vector& l = lam[tree.child(t, node, k)];
        y += step.probs[k] * l;
        z += step.probs[k] * l * step.points[k].transpose();
      }
      sol.Y(t, node) = y;
      sol.Z(t, node) = z;
    }
  }

  for (int t = 0; t < T; ++t) {
    const IncrementDistribution& step = tree.step(t);
    for (std::size_t node = 0; node < tree.node_count(t); ++node) {
      for (std::size_t k = 0; k < step.branches(); ++k) {
        const std::size_t c = tree.child(t, node, k);
        const Vector dn = lambda[static_cast<std::size_t>(t + 1)][c] - sol.Y(t, node) -
                          sol.Z(t, node) * step.points[k];
        sol.N(t + 1, c) = sol.N(t, node) + dn;
      }
    }
  }
  return sol;
}

double BsdeResidualReport::max() const {
  return std::max({equation, terminal, initial_n, martingale, orthogonality});
}

BsdeResidualReport bsde_residual(const ProbabilityTree& tree, const Generator& gen,
                                 const AdaptedProcess& eta, const BsdeSolution& sol) {
  check_inputs(tree, gen, eta);
  const int T = tree.horizon();
  BsdeResidualReport r;
  const Matrix zero_z = Matrix::Zero(gen.n, gen.d);
  for (int t = 0; t < T; ++t) {
    const int s = t + 1;
    for (std::size_t node = 0; node < tree.node_count(t); ++node) {
      for (std::size_t k = 0; k < tree.branching(t); ++k) {
        const std::size_t c = tree.child(t, node, k);
        const Matrix& z_next = s == T ? zero_z : sol.Z(s, c);
        const Vector f = gen.eval(s, sol.Y(s, c), z_next, NodeRef{s, c});
        const Vector lhs = sol.Y(s, c) - sol.Y(t, node);
        const Vector rhs = -f + sol.Z(t, node) * tree.step(t).points[k] + (sol.N(s, c) - sol.N(t, node));
        r.equation = std::max(r.equation, (lhs - rhs).cwiseAbs().maxCoeff());
      }
    }
  }
  for (std::size_t leaf = 0; leaf < tree.node_count(T); ++leaf) {
    r.terminal = std::max(r.terminal, (sol.Y(T, leaf) - eta(T, leaf)).cwiseAbs().maxCoeff());
  }
  r.initial_n = sol.N(0, 0).cwiseAbs().maxCoeff();
  r.martingale = is_martingale(tree, sol.N).max_residual;
  r.orthogonality = is_strongly_orthogonal(tree, sol.N, 0, T - 1).max_residual;
  return r;
}

namespace {

BsdeEnergy energy_of(const ProbabilityTree& tree, const AdaptedProcess& Y, const AdaptedProcess& Z,
                     const AdaptedProcess& N) {
  const int T = tree.horizon();
  BsdeEnergy e;
  for (int t = 0; t <= T; ++t) {
    for (std::size_t node = 0; node < tree.node_count(t); ++node) {
      const double p = tree.probability(t, node);
      const double y2 = Y(t, node).squaredNorm();
      e.y_energy_with_terminal += p * y2;
      if (t < T) {
        e.y_energy += p * y2;
        e.z_energy += p * Z(t, node).squaredNorm();
      }
      if (t >= 1) {
        const double dn = (N(t, node) - N(t - 1, tree.parent(t, node))).squaredNorm();
        e.dn_energy += p * dn;
      }
    }
  }
  return e;
}

}  // namespace

BsdeEnergy bsde_energy(const ProbabilityTree& tree, const BsdeSolution& sol) {
  return energy_of(tree, sol.Y, sol.Z, sol.N);
}

BsdeEnergy bsde_energy_difference(const ProbabilityTree& tree, const BsdeSolution& a,
                                  const BsdeSolution& b) {
  return energy_of(tree, a.Y - b.Y, a.Z - b.Z, a.N - b.N);
}

namespace {

struct Sampler {
  std::mt19937_64 rng;
  std::uniform_real_distribution<double> unit{-1.0, 1.0};
  double box;

  Matrix draw(Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = box * unit(rng);
    return m;
  }
  NodeRef node(const ProbabilityTree& tree, int t) {
    std::uniform_int_distribution<std::size_t> pick(0, tree.node_count(t) - 1);
    return NodeRef{t, pick(rng)};
  }
};

}  // namespace

double terminal_z_dependence(const ProbabilityTree& tree, const Generator& gen, int samples,
                             std::uint64_t seed, double box) {
  const int T = tree.horizon();
  Sampler s{std::mt19937_64(seed), {}, box};
  double worst = 0.0;
  for (int i = 0; i < samples; ++i) {
    const Vector y = s.draw(gen.n, 1);
    const Matrix z1 = s.draw(gen.n, gen.d);
    const Matrix z2 = s.draw(gen.n, gen.d);
    const NodeRef node = s.node(tree, T);
    worst = std::max(worst, (gen.eval(T, y, z1, node) - gen.eval(T, y, z2, node)).cwiseAbs().maxCoeff());
  }
  return worst;
}

double lipschitz_spot_check(const ProbabilityTree& tree, const Generator& gen, int samples,
                            std::uint64_t seed, double box) {
  const int T = tree.horizon();
  const double c1 = gen.lipschitz_c1.value_or(0.0);
  const double c2 = gen.lipschitz_c2.value_or(0.0);
  Sampler s{std::mt19937_64(seed), {}, box};
  std::uniform_int_distribution<int> pick_t(1, T);
  double worst = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < samples; ++i) {
    const int t = pick_t(s.rng);
    const NodeRef node = s.node(tree, t);
    const Vector y1 = s.draw(gen.n, 1);
    const Vector y2 = s.draw(gen.n, 1);
    Matrix z1 = s.draw(gen.n, gen.d);
    Matrix z2 = s.draw(gen.n, gen.d);
    if (t == T) z2 = z1;
    const double lhs = (gen.eval(t, y1, z1, node) - gen.eval(t, y2, z2, node)).norm();
    const double rhs = c1 * (y1 - y2).norm() + c2 * (z1 - z2).norm();
    worst = std::max(worst, lhs - rhs);
  }
  return worst;
}

}  // namespace fbsdelta
