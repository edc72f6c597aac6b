#include "fbsdelta/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace fbsdelta::oracle {

Dynamics Dynamics::from_model(const NonlinearModel& model) {
  model.validate();
  return Dynamics{model.m, model.n, model.b, model.sigma, model.f, model.h, model.x0, false};
}

Dynamics Dynamics::from_linear(const LinearCoefficients& coeffs) {
  const auto hom = std::make_shared<const LinearHomogeneous>(coeffs.hom);
  const auto in = std::make_shared<const LinearInhomogeneous>(coeffs.inhom);
  Dynamics d;
  d.m = hom->m;
  d.n = hom->n;
  d.x0 = in->x0;
  d.affine = true;
  d.b = [hom, in](int t, const Vector& x, const Vector& y, const Vector& z, NodeRef nd) {
    return (hom->A[t] * x + hom->B[t] * y + hom->C[t] * z + in->D.at(nd)).eval();
  };
  d.sigma = [hom, in](int t, const Vector& x, const Vector& y, const Vector& z, NodeRef nd) {
    return (hom->Abar[t] * x + hom->Bbar[t] * y + hom->Cbar[t] * z + in->Dbar.at(nd)).eval();
  };
  d.f = [hom, in](int t, const Vector& x, const Vector& y, const Vector& z, NodeRef nd) {
    return (-(hom->Ahat[t] * x + hom->Bhat[t] * y + hom->Chat[t] * z + in->Dhat.at(nd))).eval();
  };
  d.h = [hom, in](const Vector& x, NodeRef leaf) { return (hom->G * x + in->g.at(leaf)).eval(); };
  return d;
}

ResidualSystem::ResidualSystem(Dynamics dynamics, ProbabilityTree tree)
    : dyn_(std::move(dynamics)), tree_(std::move(tree)) {
  if (tree_.noise_dim() != 1) throw StructuralError("the oracle requires a scalar driving martingale");
  if (dyn_.m < 1 || dyn_.n < 1) throw StructuralError("dimensions must be positive");
  if (dyn_.x0.size() != dyn_.m) throw StructuralError("x0 has the wrong size");
  if (!dyn_.b || !dyn_.sigma || !dyn_.f || !dyn_.h) throw StructuralError("incomplete dynamics");
  const int T = tree_.horizon();
  node_base_.resize(static_cast<std::size_t>(T + 2));
  for (int t = 0; t <= T; ++t) node_base_[t + 1] = node_base_[t] + tree_.node_count(t);
  total_nodes_ = node_base_[T + 1];
  inner_nodes_ = node_base_[T];
  const auto m = static_cast<std::size_t>(dyn_.m);
  const auto n = static_cast<std::size_t>(dyn_.n);
  unknowns_ = total_nodes_ * (m + n) + inner_nodes_ * n;
  const std::size_t children = total_nodes_ - 1;
  residuals_ = m + children * m + inner_nodes_ * 2 * n + tree_.node_count(T) * n;
}

std::size_t ResidualSystem::x_offset(int t, std::size_t node) const {
  return (node_base_[t] + node) * static_cast<std::size_t>(dyn_.m);
}
std::size_t ResidualSystem::y_offset(int t, std::size_t node) const {
  return total_nodes_ * static_cast<std::size_t>(dyn_.m) + (node_base_[t] + node) * static_cast<std::size_t>(dyn_.n);
}
std::size_t ResidualSystem::z_offset(int t, std::size_t node) const {
  return total_nodes_ * static_cast<std::size_t>(dyn_.m + dyn_.n) +
         (node_base_[t] + node) * static_cast<std::size_t>(dyn_.n);
}

Vector ResidualSystem::evaluate(const Vector& v) const {
  if (static_cast<std::size_t>(v.size()) != unknowns_) throw StructuralError("unknown vector has the wrong size");
  const int T = tree_.horizon();
  const int m = dyn_.m;
  const int n = dyn_.n;
  auto X = [&](int t, std::size_t k) { return v.segment(static_cast<Eigen::Index>(x_offset(t, k)), m); };
  auto Y = [&](int t, std::size_t k) { return v.segment(static_cast<Eigen::Index>(y_offset(t, k)), n); };
  auto Z = [&](int t, std::size_t k) { return v.segment(static_cast<Eigen::Index>(z_offset(t, k)), n); };

  Vector F(static_cast<Eigen::Index>(residuals_));
  Eigen::Index row = 0;
  auto put = [&](const Vector& r) {
    F.segment(row, r.size()) = r;
    row += r.size();
  };

  put(X(0, 0) - dyn_.x0);
  const Vector zero_n = Vector::Zero(n);
  for (int t = 0; t < T; ++t) {
    const IncrementDistribution& step = tree_.step(t);
    for (std::size_t k = 0; k < tree_.node_count(t); ++k) {
      const Vector x = X(t, k), y = Y(t, k), z = Z(t, k);
      const NodeRef ref{t, k};
      const Vector drift = dyn_.b(t, x, y, z, ref);
      const Vector vol = dyn_.sigma(t, x, y, z, ref);
      Vector ey = Vector::Zero(n);
      Vector ez = Vector::Zero(n);
      for (std::size_t j = 0; j < step.branches(); ++j) {
        const std::size_t c = k * step.branches() + j;
        const double dw = step.points[j](0);
        put(X(t + 1, c) - x - drift - vol * dw);
        const Vector yc = Y(t + 1, c);
        const Vector zc = t + 1 < T ? Vector(Z(t + 1, c)) : zero_n;
        const Vector lambda = yc + dyn_.f(t + 1, X(t + 1, c), yc, zc, NodeRef{t + 1, c});
        ey += step.probs[j] * lambda;
        ez += (step.probs[j] * dw) * lambda;
      }
      F.segment(row, n) = y - ey;
      row += n;
      F.segment(row, n) = z - ez;
      row += n;
    }
  }
  for (std::size_t k = 0; k < tree_.node_count(T); ++k) {
    put(Y(T, k) - dyn_.h(X(T, k), NodeRef{T, k}));
  }
  return F;
}

Matrix ResidualSystem::jacobian(const Vector& v, double fd_step, bool central) const {
  const auto N = static_cast<Eigen::Index>(unknowns_);
  Matrix J(static_cast<Eigen::Index>(residuals_), N);
  const Vector F0 = central ? Vector() : evaluate(v);
  Vector w = v;
  for (Eigen::Index j = 0; j < N; ++j) {
    const double h = dyn_.affine ? 1.0 : fd_step * std::max(1.0, std::abs(v(j)));
    if (central) {
      w(j) = v(j) + h;
      const Vector Fp = evaluate(w);
      w(j) = v(j) - h;
      J.col(j) = (Fp - evaluate(w)) / (2.0 * h);
    } else {
      w(j) = v(j) + h;
      J.col(j) = (evaluate(w) - F0) / h;
    }
    w(j) = v(j);
  }
  return J;
}

Vector ResidualSystem::pack(const FbsdeSolution& sol) const {
  const int T = tree_.horizon();
  Vector v(static_cast<Eigen::Index>(unknowns_));
  for (int t = 0; t <= T; ++t) {
    for (std::size_t k = 0; k < tree_.node_count(t); ++k) {
      v.segment(static_cast<Eigen::Index>(x_offset(t, k)), dyn_.m) = sol.X(t, k);
      v.segment(static_cast<Eigen::Index>(y_offset(t, k)), dyn_.n) = sol.Y(t, k);
      if (t < T) v.segment(static_cast<Eigen::Index>(z_offset(t, k)), dyn_.n) = sol.Z(t, k);
    }
  }
  return v;
}

FbsdeSolution ResidualSystem::unpack(const Vector& v) const {
  const int T = tree_.horizon();
  const int m = dyn_.m;
  const int n = dyn_.n;
  FbsdeSolution sol{AdaptedProcess(tree_, 0, T, m, 1), AdaptedProcess(tree_, 0, T, n, 1),
                    AdaptedProcess(tree_, 0, T - 1, n, 1), AdaptedProcess(tree_, 0, T, n, 1), {}};
  for (int t = 0; t <= T; ++t) {
    for (std::size_t k = 0; k < tree_.node_count(t); ++k) {
      sol.X(t, k) = v.segment(static_cast<Eigen::Index>(x_offset(t, k)), m);
      sol.Y(t, k) = v.segment(static_cast<Eigen::Index>(y_offset(t, k)), n);
      if (t < T) sol.Z(t, k) = v.segment(static_cast<Eigen::Index>(z_offset(t, k)), n);
    }
  }
  const Vector zero_n = Vector::Zero(n);
  for (int t = 0; t < T; ++t) {
    const IncrementDistribution& step = tree_.step(t);
    for (std::size_t k = 0; k < tree_.node_count(t); ++k) {
      for (std::size_t j = 0; j < step.branches(); ++j) {
        const std::size_t c = k * step.branches() + j;
        const Vector zc = t + 1 < T ? Vector(sol.Z(t + 1, c)) : zero_n;
        const Vector lambda = sol.Y(t + 1, c) + dyn_.f(t + 1, sol.X(t + 1, c), sol.Y(t + 1, c), zc, NodeRef{t + 1, c});
        sol.N(t + 1, c) = sol.N(t, k) + lambda - sol.Y(t, k) - sol.Z(t, k) * step.points[j](0);
      }
    }
  }
  return sol;
}

namespace {

void check_tree(const ProbabilityTree& tree, int horizon) {
  if (tree.horizon() != horizon) throw StructuralError("coefficients and tree disagree on the horizon");
}

}  // namespace

ResidualSystem build_residual_system(const NonlinearModel& model, const ProbabilityTree& tree) {
  return ResidualSystem(Dynamics::from_model(model), tree);
}

ResidualSystem build_residual_system(const LinearCoefficients& coeffs, const ProbabilityTree& tree) {
  coeffs.validate(tree);
  check_tree(tree, coeffs.hom.horizon);
  return ResidualSystem(Dynamics::from_linear(coeffs), tree);
}

OracleFailed::OracleFailed(const std::string& message, NewtonTrace trace)
    : Error(message), trace_(std::move(trace)) {}

NewtonResult solve_global_newton(const ResidualSystem& system, const Vector& start, const NewtonConfig& config) {
  if (system.residuals() != system.unknowns()) throw StructuralError("residual system is not square");
  NewtonResult out{start, {}};
  Vector F = system.evaluate(out.v);
  double phi = F.squaredNorm();
  out.trace.residual_sup.push_back(F.cwiseAbs().maxCoeff());
  for (int it = 0; it < config.max_iters; ++it) {
    if (out.trace.residual_sup.back() <= config.tol) {
      out.trace.converged = true;
      return out;
    }
    const Eigen::PartialPivLU<Matrix> lu(system.jacobian(out.v, config.fd_step, config.central));
    const Vector dv = lu.solve(-F);
    if (!dv.allFinite()) throw OracleFailed("singular Jacobian", out.trace);

    double s = 1.0;
    for (;;) {
      const Vector trial = out.v + s * dv;
      const Vector Ft = system.evaluate(trial);
      const double phit = Ft.squaredNorm();
      if (std::isfinite(phit) && phit <= (1.0 - 2.0 * config.armijo_c * s) * phi) {
        out.v = trial;
        F = Ft;
        phi = phit;
        break;
      }
      s *= 0.5;
      if (s < config.min_step) throw OracleFailed("line search failed", out.trace);
    }
    out.trace.step_lengths.push_back(s);
    out.trace.residual_sup.push_back(F.cwiseAbs().maxCoeff());
  }
  if (out.trace.residual_sup.back() <= config.tol) {
    out.trace.converged = true;
    return out;
  }
  throw OracleFailed("Newton iteration cap reached", out.trace);
}

NewtonResult solve_global_newton(const ResidualSystem& system, const NewtonConfig& config) {
  return solve_global_newton(system, Vector::Zero(static_cast<Eigen::Index>(system.unknowns())), config);
}

double jacobian_min_singular_value(const ResidualSystem& system, const Vector& v) {
  const Eigen::BDCSVD<Matrix> svd(system.jacobian(v));
  return svd.singularValues().minCoeff();
}

FbsdeSolution solve(const NonlinearModel& model, const ProbabilityTree& tree, const NewtonConfig& config) {
  const ResidualSystem sys = build_residual_system(model, tree);
  return sys.unpack(solve_global_newton(sys, config).v);
}

FbsdeSolution solve(const LinearCoefficients& coeffs, const ProbabilityTree& tree, const NewtonConfig& config) {
  const ResidualSystem sys = build_residual_system(coeffs, tree);
  return sys.unpack(solve_global_newton(sys, config).v);
}

}  // namespace fbsdelta::oracle
