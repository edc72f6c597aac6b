#include <gtest/gtest.h>

#include <cmath>

#include "fbsdelta/linear_fbsde.hpp"
#include "fbsdelta/oracle.hpp"
#include "support/generators.hpp"

namespace fbsdelta {
namespace {

using testing::Rng;

Matrix one(double v) { return Matrix::Constant(1, 1, v); }

/// Anchor system of the continuation method with m = n = 1.
LinearCoefficients anchor_1d(const ProbabilityTree& tree, double G, double beta1, double beta2) {
  LinearHomogeneous h = LinearHomogeneous::zeros(1, 1, tree.horizon());
  h.G = one(G);
  for (int t = 0; t < tree.horizon(); ++t) {
    h.B[t] = one(-beta2 * G);
    h.Cbar[t] = one(-beta2 * G);
  }
  for (int t = 1; t <= tree.horizon(); ++t) h.Ahat[t] = one(-beta1 * G);
  return LinearCoefficients{h, LinearInhomogeneous::zeros(tree, 1, 1)};
}

LinearInhomogeneous combine(const LinearInhomogeneous& a, double wa, const LinearInhomogeneous& b, double wb) {
  return LinearInhomogeneous{wa * a.D + wb * b.D, wa * a.Dbar + wb * b.Dbar, wa * a.Dhat + wb * b.Dhat,
                             wa * a.g + wb * b.g, wa * a.x0 + wb * b.x0};
}

FbsdeSolution minus(const FbsdeSolution& a, const FbsdeSolution& b) {
  return FbsdeSolution{a.X - b.X, a.Y - b.Y, a.Z - b.Z, a.N - b.N, {}};
}

TEST(Riccati, AnchorExample) {
  const ProbabilityTree tree = ProbabilityTree::uniform(2, IncrementDistribution::rademacher());
  const RiccatiSequence r = riccati_backward(anchor_1d(tree, 1.0, 1.0, 1.0), tree);
  ASSERT_TRUE(r.solvable());
  EXPECT_DOUBLE_EQ(r.P[2](0, 0), 2.0);
  EXPECT_NEAR(r.P[1](0, 0), 5.0 / 3.0, 1e-15);
  for (const GammaReport& g : r.gamma_reports) EXPECT_TRUE(g.invertible);
  EXPECT_LE(r.display_consistency, 1e-12);
}

TEST(Riccati, OnlyGGivesConstantP) {
  const ProbabilityTree tree = ProbabilityTree::uniform(4, IncrementDistribution::trinomial(0.2));
  Rng rng(1);
  LinearHomogeneous h = LinearHomogeneous::zeros(3, 2, 4);
  h.G = testing::random_full_rank(rng, 2, 3);
  const RiccatiSequence r = riccati_backward(LinearCoefficients{h, LinearInhomogeneous::zeros(tree, 3, 2)}, tree);
  ASSERT_TRUE(r.solvable());
  for (int t = 1; t <= 4; ++t) EXPECT_EQ(r.P[t], h.G);
  for (const GammaReport& g : r.gamma_reports) EXPECT_EQ(g.gamma, Matrix::Identity(6, 6));
}

TEST(Riccati, TerminalValuesExact) {
  Rng rng(2);
  const ProbabilityTree tree = testing::random_tree(rng, 3, 3, 1);
  const LinearCoefficients c = testing::random_solvable_linear(rng, tree, 2, 2);
  const RiccatiSequence r = riccati_backward(c, tree);
  const Matrix I = Matrix::Identity(2, 2);
  EXPECT_EQ(r.P[3], (-c.hom.Ahat[3] + (I - c.hom.Bhat[3]) * c.hom.G).eval());
  for (std::size_t v = 0; v < tree.node_count(3); ++v) {
    EXPECT_EQ(r.p(3, v), ((I - c.hom.Bhat[3]) * c.inhom.g(3, v) - c.inhom.Dhat(3, v)).eval());
  }
}

LinearCoefficients singular_instance(const ProbabilityTree& tree) {
  LinearHomogeneous h = LinearHomogeneous::zeros(1, 1, 2);
  h.G = one(1.0);
  h.B[1] = one(1.0);
  return LinearCoefficients{h, LinearInhomogeneous::zeros(tree, 1, 1)};
}

TEST(Solvability, SingularConstruction) {
  const ProbabilityTree tree = ProbabilityTree::uniform(2, IncrementDistribution::rademacher());
  const LinearCoefficients c = singular_instance(tree);
  const SolvabilityReport rep = check_solvability(c, tree);
  ASSERT_FALSE(rep.solvable());
  EXPECT_EQ(*rep.failed_at, 1);
  EXPECT_EQ(rep.steps.back().min_singular_value, 0.0);

  const RiccatiSequence r = riccati_backward(c, tree);
  EXPECT_EQ(r.failed_at, std::optional<int>(1));
  EXPECT_EQ(r.P[2](0, 0), 1.0);

  try {
    solve_linear(c, tree);
    FAIL() << "expected NotSolvable";
  } catch (const NotSolvable& e) {
    EXPECT_EQ(e.time(), 1);
    EXPECT_EQ(std::string(e.what()), "NotSolvable at t=1 (min singular value 0.0e0)");
  }
  EXPECT_THROW(LinearSolver(c.hom, tree), NotSolvable);
}

TEST(Solvability, VerdictIgnoresInhomogeneousData) {
  const ProbabilityTree tree = ProbabilityTree::uniform(2, IncrementDistribution::rademacher());
  Rng rng(3);
  LinearCoefficients a = singular_instance(tree);
  LinearCoefficients b = a;
  b.inhom = testing::random_inhomogeneous(rng, tree, 1, 1);
  const SolvabilityReport ra = check_solvability(a, tree), rb = check_solvability(b, tree);
  EXPECT_EQ(ra.failed_at, rb.failed_at);
  ASSERT_EQ(ra.steps.size(), rb.steps.size());
  for (std::size_t i = 0; i < ra.steps.size(); ++i) {
    EXPECT_EQ(ra.steps[i].gamma, rb.steps[i].gamma);
    EXPECT_EQ(ra.steps[i].min_singular_value, rb.steps[i].min_singular_value);
  }
}

TEST(Solvability, RandomPairsShareVerdict) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = testing::uniform_int(rng, 1, 3), n = testing::uniform_int(rng, 1, 3);
    const ProbabilityTree tree = testing::random_tree(rng, testing::uniform_int(rng, 1, 4), 2, 1);
    const LinearHomogeneous h = testing::random_homogeneous(rng, m, n, tree.horizon(), 1.5);
    const LinearCoefficients a{h, testing::random_inhomogeneous(rng, tree, m, n)};
    const LinearCoefficients b{h, testing::random_inhomogeneous(rng, tree, m, n)};
    const SolvabilityReport ra = check_solvability(a, tree), rb = check_solvability(b, tree);
    EXPECT_EQ(ra.failed_at, rb.failed_at);
    ASSERT_EQ(ra.steps.size(), rb.steps.size());
    for (std::size_t i = 0; i < ra.steps.size(); ++i) {
      EXPECT_EQ(ra.steps[i].min_singular_value, rb.steps[i].min_singular_value);
    }
  }
}

TEST(Validation, RejectsBadCoefficients) {
  const ProbabilityTree tree = ProbabilityTree::uniform(2, IncrementDistribution::rademacher());
  LinearCoefficients c = anchor_1d(tree, 1.0, 1.0, 1.0);
  c.hom.Chat[2] = one(0.5);
  EXPECT_THROW(c.validate(tree), ValidationError);
  c = anchor_1d(tree, 0.0, 1.0, 1.0);
  EXPECT_THROW(c.validate(tree), ValidationError);
  c = anchor_1d(tree, 1.0, 1.0, 1.0);
  c.hom.B[0] = Matrix::Zero(2, 1);
  EXPECT_THROW(c.validate(tree), StructuralError);
}

TEST(SolveLinear, DecoupledConstantInstance) {
  const ProbabilityTree tree = ProbabilityTree::uniform(3, IncrementDistribution::rademacher());
  LinearCoefficients c{LinearHomogeneous::zeros(1, 1, 3), LinearInhomogeneous::zeros(tree, 1, 1)};
  c.hom.G = one(1.0);
  c.inhom.g = AdaptedProcess::constant(tree, 3, 3, one(1.0));
  c.inhom.x0 = Vector::Constant(1, 3.0);
  const FbsdeSolution s = solve_linear(c, tree);
  for (int t = 0; t <= 3; ++t) {
    for (std::size_t v = 0; v < tree.node_count(t); ++v) {
      EXPECT_EQ(s.X(t, v)(0), 3.0);
      EXPECT_EQ(s.Y(t, v)(0), 4.0);
      EXPECT_EQ(s.N(t, v)(0), 0.0);
      if (t < 3) EXPECT_EQ(s.Z(t, v)(0), 0.0);
    }
  }
}

TEST(SolveLinear, TrinomialSquaredIncrementTerminal) {
  const ProbabilityTree tree = ProbabilityTree::uniform(2, IncrementDistribution::trinomial(0.25));
  LinearCoefficients c{LinearHomogeneous::zeros(1, 1, 2), LinearInhomogeneous::zeros(tree, 1, 1)};
  c.hom.G = one(1.0);
  c.inhom.x0 = Vector::Constant(1, 3.0);
  for (std::size_t v = 0; v < tree.node_count(2); ++v) {
    const double dw = tree.increment_into(2, v)(0);
    c.inhom.g(2, v) = one(dw * dw);
  }
  const FbsdeSolution s = solve_linear(c, tree);
  for (std::size_t v = 0; v < tree.node_count(1); ++v) {
    EXPECT_NEAR(s.Y(1, v)(0), 4.0, 1e-14);
    EXPECT_NEAR(s.Z(1, v)(0), 0.0, 1e-14);
  }
  for (std::size_t v = 0; v < tree.node_count(2); ++v) {
    EXPECT_EQ(s.X(2, v)(0), 3.0);
    const double dw = tree.increment_into(2, v)(0);
    const double dn = s.N(2, v)(0) - s.N(1, tree.parent(2, v))(0);
    EXPECT_NEAR(dn, dw * dw - 1.0, 1e-14);
  }
  EXPECT_GT(sup_norm(s.N), 0.5);
  EXPECT_LE(s.residuals.max(), 1e-10);
}

TEST(SolveLinear, CoupledInstanceMatchesOracle) {
  Rng rng(5);
  const ProbabilityTree tree = ProbabilityTree::uniform(4, IncrementDistribution::rademacher());
  for (int trial = 0; trial < 5; ++trial) {
    LinearCoefficients c = testing::random_solvable_linear(rng, tree, 2, 1);
    c.hom.G = Matrix(1, 2);
    c.hom.G << 1.0, 0.0;
    if (!check_solvability(c.hom).solvable()) continue;
    const FbsdeSolution s = solve_linear(c, tree);
    EXPECT_LE(s.residuals.max(), 1e-10) << s.residuals.describe();
    const FbsdeSolution o = oracle::solve(c, tree);
    EXPECT_LE(solution_distance(s, o), 1e-8);
    EXPECT_LE(linear_residual(c, tree, o).max(), 1e-8);
  }
}

TEST(SolveLinear, RandomInstancesSatisfyRelations) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = testing::uniform_int(rng, 1, 3), n = testing::uniform_int(rng, 1, 3);
    const ProbabilityTree tree = ProbabilityTree::uniform(testing::uniform_int(rng, 1, 4),
                                                          trial % 2 ? IncrementDistribution::rademacher()
                                                                    : IncrementDistribution::trinomial(0.3));
    const LinearCoefficients c = testing::random_solvable_linear(rng, tree, m, n);
    const RiccatiSequence r = riccati_backward(c, tree);
    ASSERT_TRUE(r.solvable());
    EXPECT_LE(r.display_consistency, 1e-12);
    const FbsdeSolution s = solve_linear(c, tree);
    EXPECT_LE(s.residuals.max(), 1e-10) << s.residuals.describe();
    EXPECT_LE(decoupling_residual(tree, r, s), 1e-10);
    EXPECT_LE(algebraic_system_residual(c, tree, r, s.X), 1e-10);

    const FbsdeSolution o = oracle::solve(c, tree);
    EXPECT_LE(algebraic_system_residual(c, tree, r, o.X), 1e-8);
  }
}

TEST(SolveLinear, CorruptedForwardValueIsDetected) {
  Rng rng(7);
  const ProbabilityTree tree = ProbabilityTree::uniform(3, IncrementDistribution::rademacher());
  const LinearCoefficients c = testing::random_solvable_linear(rng, tree, 2, 1);
  FbsdeSolution s = solve_linear(c, tree);
  s.X(2, 1)(0) += 1.0;
  EXPECT_GE(linear_residual(c, tree, s).forward, 0.5);
}

TEST(SolveLinear, SolutionMapIsAffine) {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const int m = testing::uniform_int(rng, 1, 3), n = testing::uniform_int(rng, 1, 3);
    const ProbabilityTree tree = ProbabilityTree::uniform(3, IncrementDistribution::trinomial(0.2));
    const LinearCoefficients c = testing::random_solvable_linear(rng, tree, m, n);
    const LinearSolver solver(c.hom, tree);
    const LinearInhomogeneous zero = LinearInhomogeneous::zeros(tree, m, n);
    const LinearInhomogeneous a = testing::random_inhomogeneous(rng, tree, m, n);
    const LinearInhomogeneous b = testing::random_inhomogeneous(rng, tree, m, n);
    const FbsdeSolution s0 = solver.solve(zero);
    const FbsdeSolution la = minus(solver.solve(a), s0);
    const FbsdeSolution lb = minus(solver.solve(b), s0);
    const FbsdeSolution lab = minus(solver.solve(combine(a, 1.0, b, 1.0)), s0);
    const FbsdeSolution l3a = minus(solver.solve(combine(a, -3.0, b, 0.0)), s0);
    const FbsdeSolution sum{la.X + lb.X, la.Y + lb.Y, la.Z + lb.Z, la.N + lb.N, {}};
    const FbsdeSolution scaled{-3.0 * la.X, -3.0 * la.Y, -3.0 * la.Z, -3.0 * la.N, {}};
    EXPECT_LE(solution_distance(lab, sum), 1e-9);
    EXPECT_LE(solution_distance(l3a, scaled), 1e-9);
  }
}

TEST(SolveLinear, SolverReusesFactorisation) {
  Rng rng(9);
  const ProbabilityTree tree = ProbabilityTree::uniform(3, IncrementDistribution::rademacher());
  const LinearCoefficients c = testing::random_solvable_linear(rng, tree, 2, 2);
  const LinearSolver solver(c.hom, tree);
  EXPECT_EQ(solution_distance(solver.solve(c.inhom), solve_linear(c, tree)), 0.0);
}

}  // namespace
}  // namespace fbsdelta
