#include <gtest/gtest.h>

#include <cmath>

#include "fbsdelta/bsde.hpp"
#include "fbsdelta/linear_fbsde.hpp"
#include "fbsdelta/oracle.hpp"
#include "support/generators.hpp"

namespace fbsdelta {
namespace {

using testing::Rng;

Vector v1(double a) { return Vector::Constant(1, a); }

NonlinearModel zero_model() {
  NonlinearModel m = testing::anchor_model(Matrix::Identity(1, 1), 1.0, 1.0, v1(0.0));
  auto zero = [](int, const Vector&, const Vector&, const Vector&, NodeRef) { return v1(0.0); };
  m.b = zero;
  m.sigma = zero;
  m.f = zero;
  m.h = [](const Vector&, NodeRef) { return v1(0.0); };
  return m;
}

TEST(ResidualSystem, CountsAreSquare) {
  const ProbabilityTree tree = ProbabilityTree::uniform(1, IncrementDistribution::rademacher());
  const oracle::ResidualSystem sys = oracle::build_residual_system(zero_model(), tree);
  EXPECT_EQ(sys.unknowns(), 7u);
  EXPECT_EQ(sys.residuals(), 7u);

  const ProbabilityTree tri = ProbabilityTree::uniform(3, IncrementDistribution::trinomial(0.2));
  Rng rng(1);
  const LinearCoefficients c = testing::random_solvable_linear(rng, tri, 2, 3);
  const oracle::ResidualSystem big = oracle::build_residual_system(c, tri);
  // X and Y on all 40 nodes, Z on the 13 inner ones.
  EXPECT_EQ(big.unknowns(), 40u * 2 + 40u * 3 + 13u * 3);
  EXPECT_EQ(big.residuals(), big.unknowns());
}

TEST(ResidualSystem, ZeroModelHasZeroRoot) {
  const ProbabilityTree tree = ProbabilityTree::uniform(3, IncrementDistribution::trinomial(0.25));
  const oracle::ResidualSystem sys = oracle::build_residual_system(zero_model(), tree);
  EXPECT_EQ(sys.evaluate(Vector::Zero(static_cast<Eigen::Index>(sys.unknowns()))).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ResidualSystem, RejectsVectorNoise) {
  Rng rng(2);
  const ProbabilityTree tree = testing::random_tree(rng, 2, 3, 2);
  EXPECT_THROW(oracle::build_residual_system(zero_model(), tree), StructuralError);
}

TEST(ResidualSystem, AffineJacobianIsConstant) {
  Rng rng(3);
  const ProbabilityTree tree = ProbabilityTree::uniform(3, IncrementDistribution::rademacher());
  const LinearCoefficients c = testing::random_solvable_linear(rng, tree, 2, 1);
  const oracle::ResidualSystem sys = oracle::build_residual_system(c, tree);
  ASSERT_TRUE(sys.affine());
  const auto n = static_cast<Eigen::Index>(sys.unknowns());
  const Matrix j1 = sys.jacobian(testing::random_matrix(rng, n, 1, 3.0));
  const Matrix j2 = sys.jacobian(testing::random_matrix(rng, n, 1, 3.0));
  EXPECT_LE((j1 - j2).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(ResidualSystem, PackUnpackRoundTrip) {
  Rng rng(4);
  const ProbabilityTree tree = ProbabilityTree::uniform(2, IncrementDistribution::trinomial(0.3));
  const LinearCoefficients c = testing::random_solvable_linear(rng, tree, 2, 2);
  const FbsdeSolution s = solve_linear(c, tree);
  const oracle::ResidualSystem sys = oracle::build_residual_system(c, tree);
  const Vector v = sys.pack(s);
  EXPECT_LE(sys.evaluate(v).cwiseAbs().maxCoeff(), 1e-10);
  const FbsdeSolution back = sys.unpack(v);
  EXPECT_EQ(state_distance(back, s), 0.0);
  EXPECT_LE(sup_distance(back.N, s.N), 1e-12);
}

TEST(Newton, LinearInstancesConvergeQuickly) {
  Rng rng(5);
  const ProbabilityTree tree = ProbabilityTree::uniform(3, IncrementDistribution::rademacher());
  for (int trial = 0; trial < 10; ++trial) {
    const LinearCoefficients c = testing::random_solvable_linear(rng, tree, 2, 1);
    const oracle::ResidualSystem sys = oracle::build_residual_system(c, tree);
    const oracle::NewtonResult r = oracle::solve_global_newton(sys);
    EXPECT_TRUE(r.trace.converged);
    EXPECT_LE(r.trace.iterations(), 3);
    EXPECT_LE(solution_distance(sys.unpack(r.v), solve_linear(c, tree)), 1e-8);
  }
}

TEST(Newton, DecoupledModelMatchesBsde) {
  const ProbabilityTree tree = ProbabilityTree::uniform(3, IncrementDistribution::trinomial(0.25));
  NonlinearModel m = zero_model();
  m.x0 = v1(0.4);
  m.f = [](int t, const Vector& x, const Vector& y, const Vector& z, NodeRef) {
    return v1(0.5 * std::sin(y(0)) - x(0) + (t < 3 ? 0.3 * std::tanh(z(0)) : 0.0));
  };
  m.h = [](const Vector& x, NodeRef) { return v1(std::exp(x(0))); };
  const FbsdeSolution o = oracle::solve(m, tree);

  Generator gen = Generator::zero(1, 1);
  gen.eval = [&m](int t, const Vector& y, const Matrix& z, NodeRef r) { return m.f(t, v1(0.4), y, Vector(z.col(0)), r); };
  const BsdeSolution b = solve_bsde(tree, gen, AdaptedProcess::constant(tree, 3, 3, v1(std::exp(0.4))));
  EXPECT_LE(sup_distance(o.Y, b.Y), 1e-9);
  EXPECT_LE(sup_distance(o.Z, b.Z), 1e-9);
  EXPECT_LE(sup_distance(o.N, b.N), 1e-9);
}

TEST(Newton, SmallResidualImpliesSolution) {
  const ProbabilityTree tree = ProbabilityTree::uniform(3, IncrementDistribution::trinomial(0.2));
  NonlinearModel m = testing::anchor_model(Matrix::Identity(1, 1), 1.0, 1.0, v1(1.0));
  m.b = [](int, const Vector& x, const Vector& y, const Vector&, NodeRef) {
    return v1(-y(0) + 0.1 * std::tanh(x(0)));
  };
  m.f = [](int, const Vector& x, const Vector& y, const Vector&, NodeRef) {
    return v1(x(0) + 0.1 * std::tanh(y(0)));
  };
  m.sigma = [](int, const Vector&, const Vector&, const Vector& z, NodeRef) { return v1(0.5 - z(0)); };
  const oracle::ResidualSystem sys = oracle::build_residual_system(m, tree);
  const oracle::NewtonResult r = oracle::solve_global_newton(sys);
  ASSERT_TRUE(r.trace.converged);
  EXPECT_LE(r.trace.residual_sup.back(), 1e-10);
  const FbsdeSolution s = sys.unpack(r.v);
  const FbsdeResidualReport rep = nonlinear_residual(m, tree, s);
  EXPECT_LE(rep.max(), 1e-9) << rep.describe();
  EXPECT_TRUE(is_martingale(tree, s.N, 1e-9).ok);
  EXPECT_TRUE(is_strongly_orthogonal(tree, s.N, 0, 2, 1e-9).ok);
  EXPECT_GT(sup_norm(s.N), 1e-3);
}

TEST(Newton, CentralDifferencesAgree) {
  const ProbabilityTree tree = ProbabilityTree::uniform(2, IncrementDistribution::rademacher());
  NonlinearModel m = zero_model();
  m.b = [](int, const Vector& x, const Vector& y, const Vector&, NodeRef) { return v1(std::sin(x(0)) - y(0)); };
  m.h = [](const Vector& x, NodeRef) { return v1(x(0) * x(0)); };
  const oracle::ResidualSystem sys = oracle::build_residual_system(m, tree);
  Rng rng(6);
  const Vector v = testing::random_matrix(rng, static_cast<Eigen::Index>(sys.unknowns()), 1, 1.0);
  EXPECT_LE((sys.jacobian(v) - sys.jacobian(v, 1e-5, true)).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Newton, IterationCapRaises) {
  const ProbabilityTree tree = ProbabilityTree::uniform(3, IncrementDistribution::rademacher());
  NonlinearModel m = zero_model();
  m.x0 = v1(2.0);
  m.h = [](const Vector& x, NodeRef) { return v1(std::exp(x(0))); };
  m.b = [](int, const Vector&, const Vector& y, const Vector&, NodeRef) { return v1(-0.5 * std::tanh(y(0))); };
  oracle::NewtonConfig cfg;
  cfg.max_iters = 1;
  try {
    oracle::solve_global_newton(oracle::build_residual_system(m, tree), cfg);
    FAIL() << "expected OracleFailed";
  } catch (const oracle::OracleFailed& e) {
    EXPECT_FALSE(e.trace().converged);
    EXPECT_EQ(e.trace().iterations(), 1);
  }
}

TEST(Newton, SingularLinearSystemHasSingularJacobian) {
  const ProbabilityTree tree = ProbabilityTree::uniform(2, IncrementDistribution::rademacher());
  LinearCoefficients c{LinearHomogeneous::zeros(1, 1, 2), LinearInhomogeneous::zeros(tree, 1, 1)};
  c.hom.G = Matrix::Ones(1, 1);
  c.hom.B[1] = Matrix::Ones(1, 1);
  const oracle::ResidualSystem sys = oracle::build_residual_system(c, tree);
  EXPECT_LE(oracle::jacobian_min_singular_value(sys, Vector::Zero(static_cast<Eigen::Index>(sys.unknowns()))), 1e-10);
}

}  // namespace
}  // namespace fbsdelta
