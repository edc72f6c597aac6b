#include <gtest/gtest.h>

#include <cmath>

#include "fbsdelta/bsde.hpp"
#include "support/generators.hpp"

namespace fbsdelta {
namespace {

using testing::Rng;

AdaptedProcess scalar_terminal(const ProbabilityTree& tree, const std::function<double(std::size_t)>& value) {
  AdaptedProcess eta(tree, tree.horizon(), tree.horizon(), 1);
  for (std::size_t v = 0; v < tree.node_count(tree.horizon()); ++v) eta(tree.horizon(), v)(0) = value(v);
  return eta;
}

Generator scalar_generator(std::function<double(double y, double z)> f) {
  Generator g = Generator::zero(1, 1);
  g.eval = [f](int, const Vector& y, const Matrix& z, NodeRef) { return Vector::Constant(1, f(y(0), z(0, 0))); };
  return g;
}

TEST(Bsde, ConstantTerminalIsConstant) {
  const ProbabilityTree tree = ProbabilityTree::uniform(3, IncrementDistribution::trinomial(0.3));
  const BsdeSolution s = solve_bsde(tree, Generator::zero(1, 1), scalar_terminal(tree, [](std::size_t) { return 2.5; }));
  for (int t = 0; t <= 3; ++t) {
    for (std::size_t v = 0; v < tree.node_count(t); ++v) {
      EXPECT_EQ(s.Y(t, v)(0), 2.5);
      EXPECT_EQ(s.N(t, v)(0), 0.0);
      if (t < 3) EXPECT_EQ(s.Z(t, v)(0), 0.0);
    }
  }
}

TEST(Bsde, DriverTerminalHasUnitZ) {
  const ProbabilityTree tree = ProbabilityTree::uniform(2, IncrementDistribution::rademacher());
  const BsdeSolution s =
      solve_bsde(tree, Generator::zero(1, 1), scalar_terminal(tree, [&](std::size_t v) { return tree.driver_value(2, v)(0); }));
  for (int t = 0; t <= 2; ++t) {
    for (std::size_t v = 0; v < tree.node_count(t); ++v) {
      EXPECT_EQ(s.Y(t, v)(0), tree.driver_value(t, v)(0));
      EXPECT_EQ(s.N(t, v)(0), 0.0);
      if (t < 2) EXPECT_EQ(s.Z(t, v)(0), 1.0);
    }
  }
}

TEST(Bsde, LinearGeneratorDoublesBackward) {
  const ProbabilityTree tree = ProbabilityTree::uniform(3, IncrementDistribution::trinomial(0.25));
  const BsdeSolution s = solve_bsde(tree, scalar_generator([](double y, double) { return y; }),
                                    scalar_terminal(tree, [](std::size_t) { return 1.0; }));
  const double expected[] = {8.0, 4.0, 2.0, 1.0};
  for (int t = 0; t <= 3; ++t) {
    for (std::size_t v = 0; v < tree.node_count(t); ++v) {
      EXPECT_EQ(s.Y(t, v)(0), expected[t]);
      EXPECT_EQ(s.N(t, v)(0), 0.0);
    }
  }
}

TEST(Bsde, RejectsZDependenceAtHorizon) {
  const ProbabilityTree tree = ProbabilityTree::uniform(2, IncrementDistribution::rademacher());
  Generator g = scalar_generator([](double, double z) { return z; });
  g.terminal_z_independent = false;
  EXPECT_THROW(solve_bsde(tree, g, scalar_terminal(tree, [](std::size_t) { return 1.0; })), ValidationError);
  EXPECT_GT(terminal_z_dependence(tree, g, 16, 1), 0.0);
}

TEST(Bsde, ShapeMismatchIsStructural) {
  const ProbabilityTree tree = ProbabilityTree::uniform(2, IncrementDistribution::rademacher());
  EXPECT_THROW(solve_bsde(tree, Generator::zero(2, 1), scalar_terminal(tree, [](std::size_t) { return 1.0; })),
               StructuralError);
}

TEST(Bsde, RandomInstancesSatisfyEquation) {
  Rng rng(101);
  for (int trial = 0; trial < 30; ++trial) {
    const int T = testing::uniform_int(rng, 1, 4);
    const int branches = testing::uniform_int(rng, 2, 3);
    const int d = branches == 2 ? 1 : testing::uniform_int(rng, 1, 2);
    const int n = testing::uniform_int(rng, 1, 3);
    const ProbabilityTree tree = testing::random_tree(rng, T, branches, d);
    std::vector<std::string> texts;
    for (int i = 0; i < n; ++i) texts.push_back(testing::random_generator_text(rng, n, n * d, T));
    const Generator gen = testing::dsl_generator(texts, n, d);
    const AdaptedProcess eta = testing::random_process(rng, tree, T, T, n);
    const BsdeSolution s = solve_bsde(tree, gen, eta);
    const BsdeResidualReport r = bsde_residual(tree, gen, eta, s);
    EXPECT_LE(r.max(), 1e-10) << "trial " << trial;
    EXPECT_TRUE(is_martingale(tree, s.N).ok);
    EXPECT_TRUE(is_strongly_orthogonal(tree, s.N, 0, T - 1).ok);
    if (d == 1 && branches == 2) EXPECT_LE(sup_norm(s.N), 1e-12);
  }
}

TEST(Bsde, TrinomialSquareIncrementLeavesOrthogonalResidue) {
  const ProbabilityTree tree = ProbabilityTree::uniform(3, IncrementDistribution::trinomial(0.25));
  const AdaptedProcess eta = scalar_terminal(tree, [&](std::size_t v) {
    const double dw = tree.increment_into(3, v)(0);
    return dw * dw;
  });
  const BsdeSolution s = solve_bsde(tree, Generator::zero(1, 1), eta);
  EXPECT_GE(sup_norm(s.N), 0.1);
  EXPECT_LE(is_strongly_orthogonal(tree, s.N, 0, 2).max_residual, 1e-12);
  EXPECT_LE(is_martingale(tree, s.N).max_residual, 1e-12);
}

TEST(Bsde, ScalingTerminalScalesSolutionForLinearGenerators) {
  const ProbabilityTree tree = ProbabilityTree::uniform(3, IncrementDistribution::trinomial(0.2));
  const Generator gen = testing::dsl_generator({"0.4*y1 - 0.2*y2 + min(3 - t, 1)*0.3*z2", "0.1*y1 + min(3 - t, 1)*(0.5*z1 - 0.2*z2)"}, 2, 1);
  Rng rng(7);
  const AdaptedProcess eta1 = testing::random_process(rng, tree, 3, 3, 2);
  const AdaptedProcess eta2 = testing::random_process(rng, tree, 3, 3, 2);
  const BsdeSolution s1 = solve_bsde(tree, gen, eta1);
  const BsdeSolution s2 = solve_bsde(tree, gen, eta2);
  for (double a : {-2.0, 0.5, 3.0}) {
    const BsdeSolution sa = solve_bsde(tree, gen, a * eta1);
    EXPECT_LE(sup_distance(sa.Y, a * s1.Y), 1e-10);
    EXPECT_LE(sup_distance(sa.Z, a * s1.Z), 1e-10);
    EXPECT_LE(sup_distance(sa.N, a * s1.N), 1e-10);
  }
  const BsdeSolution sum = solve_bsde(tree, gen, eta1 + eta2);
  EXPECT_LE(sup_distance(sum.Y, s1.Y + s2.Y), 1e-10);
  EXPECT_LE(sup_distance(sum.Z, s1.Z + s2.Z), 1e-10);
}

TEST(Bsde, StabilityUnderShrinkingPerturbations) {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const ProbabilityTree tree = testing::random_tree(rng, 3, 3, 1);
    const Generator gen = testing::dsl_generator({testing::random_generator_text(rng, 1, 1, 3)}, 1, 1);
    const AdaptedProcess eta = testing::random_process(rng, tree, 3, 3, 1);
    const AdaptedProcess bump = testing::random_process(rng, tree, 3, 3, 1);
    const BsdeSolution base = solve_bsde(tree, gen, eta);
    double previous = std::numeric_limits<double>::infinity();
    double scale = 1.0;
    for (int k = 0; k < 4; ++k, scale *= 0.5) {
      const BsdeSolution s = solve_bsde(tree, gen, eta + scale * bump);
      const double diff = bsde_energy_difference(tree, s, base).total();
      EXPECT_LE(diff, previous * (1.0 + 1e-9));
      previous = diff;
    }
    EXPECT_LE(previous, 0.1 * bsde_energy_difference(tree, solve_bsde(tree, gen, eta + bump), base).total());
  }
}

TEST(Bsde, EnergyConventionsDifferByTerminalTerm) {
  const ProbabilityTree tree = ProbabilityTree::uniform(2, IncrementDistribution::rademacher());
  const BsdeSolution s = solve_bsde(tree, Generator::zero(1, 1), scalar_terminal(tree, [](std::size_t) { return 3.0; }));
  const BsdeEnergy e = bsde_energy(tree, s);
  EXPECT_DOUBLE_EQ(e.y_energy, 18.0);
  EXPECT_DOUBLE_EQ(e.y_energy_with_terminal, 27.0);
  EXPECT_EQ(e.z_energy, 0.0);
  EXPECT_EQ(e.dn_energy, 0.0);
}

TEST(Bsde, LipschitzSpotCheck) {
  const ProbabilityTree tree = ProbabilityTree::uniform(2, IncrementDistribution::rademacher());
  Generator g = testing::dsl_generator({"0.5*tanh(y1) + min(2 - t, 1)*0.25*sin(z1)"}, 1, 1);
  g.lipschitz_c1 = 0.5;
  g.lipschitz_c2 = 0.25;
  EXPECT_LE(lipschitz_spot_check(tree, g, 500, 3), 1e-12);
  g.lipschitz_c1 = 0.1;
  EXPECT_GT(lipschitz_spot_check(tree, g, 500, 3), 0.0);
}

}  // namespace
}  // namespace fbsdelta
