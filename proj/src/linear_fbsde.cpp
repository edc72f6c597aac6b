#include "fbsdelta/linear_fbsde.hpp"

#include <algorithm>
#include <string>

namespace fbsdelta {

namespace {

std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_shape(const std::vector<Matrix>& seq, int lo, int hi, Eigen::Index r, Eigen::Index c,
                   const char* name) {
  if (static_cast<int>(seq.size()) < hi + 1) {
    throw StructuralError(std::string(name) + " needs entries up to t=" + std::to_string(hi));
  }
  for (int t = lo; t <= hi; ++t) {
    const Matrix& m = seq[static_cast<std::size_t>(t)];
    if (m.rows() != r || m.cols() != c) {
      throw StructuralError(std::string(name) + "_" + std::to_string(t) + " has shape " + shape_of(m) +
                            ", expected " + std::to_string(r) + "x" + std::to_string(c));
    }
  }
}

void require_process(const AdaptedProcess& p, const ProbabilityTree& tree, int lo, int hi, Eigen::Index rows,
                     const char* name) {
  if (p.empty() || p.t_lo() != lo || p.t_hi() != hi || p.rows() != rows || p.cols() != 1) {
    throw StructuralError(std::string(name) + " must be an (" + std::to_string(rows) + ", 1) process on [" +
                          std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  for (int t = lo; t <= hi; ++t) {
    if (p.node_count(t) != tree.node_count(t)) {
      throw StructuralError(std::string(name) + " lives on a different tree");
    }
  }
}

// E[x_{t+1} | F_t] and E[x_{t+1} dW_t | F_t] at one node for scalar W.
struct ChildMoments {
  Vector mean;
  Vector cov;
};

ChildMoments child_moments(const ProbabilityTree& tree, const AdaptedProcess& x, int t, std::size_t node) {
  const IncrementDistribution& step = tree.step(t);
  ChildMoments out{Vector::Zero(x.rows()), Vector::Zero(x.rows())};
  for (std::size_t k = 0; k < step.branches(); ++k) {
    const Matrix& v = x(t + 1, tree.child(t, node, k));
    out.mean += step.probs[k] * v;
    out.cov += (step.probs[k] * step.points[k](0)) * v;
  }
  return out;
}

Matrix stack(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

struct Sweep {
  std::vector<GammaReport> reports;  // decreasing t while sweeping
  std::optional<int> failed_at;
  std::vector<Matrix> P;
  std::vector<Eigen::PartialPivLU<Matrix>> lu;
  double display_consistency = 0.0;
};

Sweep backward_sweep(const LinearHomogeneous& h, double threshold) {
  const int T = h.horizon;
  const int m = h.m;
  const Matrix In = Matrix::Identity(h.n, h.n);
  const Matrix I2m = Matrix::Identity(2 * m, 2 * m);

  Sweep s;
  s.P.assign(static_cast<std::size_t>(T + 1), Matrix());
  s.lu.resize(static_cast<std::size_t>(T));
  s.P[T] = -h.Ahat[T] + (In - h.Bhat[T]) * h.G;

  for (int t = T - 1; t >= 0; --t) {
    const Matrix& Pn = s.P[t + 1];
    Matrix coupling(2 * m, 2 * m);
    coupling << h.B[t] * Pn, h.C[t] * Pn, h.Bbar[t] * Pn, h.Cbar[t] * Pn;
    GammaReport rep;
    rep.t = t;
    rep.gamma = I2m - coupling;
    rep.min_singular_value = Eigen::JacobiSVD<Matrix>(rep.gamma).singularValues().minCoeff();
    rep.invertible = rep.min_singular_value > threshold;
    s.reports.push_back(rep);
    if (!rep.invertible) {
      s.failed_at = t;
      break;
    }
    s.lu[t].compute(rep.gamma);
    if (t == 0) break;

    const Matrix solved = s.lu[t].solve(stack(Matrix::Identity(m, m) + h.A[t], h.Abar[t]));
    const Matrix Gt = Pn * solved.topRows(m);
    const Matrix Ht = Pn * solved.bottomRows(m);
    s.P[t] = -h.Ahat[t] + (In - h.Bhat[t]) * Gt - h.Chat[t] * Ht;

    Matrix row(h.n, 2 * m);
    row << (In - h.Bhat[t]) * Pn, -h.Chat[t] * Pn;
    const Matrix display = -h.Ahat[t] + row * solved;
    s.display_consistency = std::max(s.display_consistency, (display - s.P[t]).cwiseAbs().maxCoeff());
  }
  std::reverse(s.reports.begin(), s.reports.end());
  return s;
}

// Offsets p_t on [1, T]. Times at or below `stop` are left at zero.
AdaptedProcess offset_recursion(const LinearHomogeneous& h, const ProbabilityTree& tree,
                                const std::vector<Matrix>& P,
                                const std::vector<Eigen::PartialPivLU<Matrix>>& lu, int stop,
                                const LinearInhomogeneous& inhom) {
  const int T = h.horizon;
  const int m = h.m;
  const Matrix In = Matrix::Identity(h.n, h.n);
  AdaptedProcess p(tree, 1, T, h.n, 1);
  for (std::size_t leaf = 0; leaf < tree.node_count(T); ++leaf) {
    p(T, leaf) = (In - h.Bhat[T]) * inhom.g(T, leaf) - inhom.Dhat(T, leaf);
  }
  for (int t = T - 1; t >= std::max(1, stop + 1); --t) {
    const Matrix Bs = stack(h.B[t], h.Bbar[t]);
    const Matrix Cs = stack(h.C[t], h.Cbar[t]);
    const Matrix& Pn = P[t + 1];
    for (std::size_t node = 0; node < tree.node_count(t); ++node) {
      const ChildMoments mom = child_moments(tree, p, t, node);
      const Vector rhs = Bs * mom.mean + Cs * mom.cov + stack(inhom.D(t, node), inhom.Dbar(t, node));
      const Vector w = lu[t].solve(rhs);
      const Vector gt = Pn * w.head(m) + mom.mean;
      const Vector ht = Pn * w.tail(m) + mom.cov;
      p(t, node) = (In - h.Bhat[t]) * gt - h.Chat[t] * ht - inhom.Dhat(t, node);
    }
  }
  return p;
}

}  // namespace

LinearHomogeneous LinearHomogeneous::zeros(int m, int n, int horizon) {
  if (m < 1 || n < 1 || horizon < 1) throw StructuralError("dimensions and horizon must be positive");
  LinearHomogeneous h;
  h.m = m;
  h.n = n;
  h.horizon = horizon;
  const auto T = static_cast<std::size_t>(horizon);
  h.A.assign(T, Matrix::Zero(m, m));
  h.Abar.assign(T, Matrix::Zero(m, m));
  h.B.assign(T, Matrix::Zero(m, n));
  h.Bbar.assign(T, Matrix::Zero(m, n));
  h.C.assign(T, Matrix::Zero(m, n));
  h.Cbar.assign(T, Matrix::Zero(m, n));
  h.Ahat.assign(T + 1, Matrix::Zero(n, m));
  h.Bhat.assign(T + 1, Matrix::Zero(n, n));
  h.Chat.assign(T + 1, Matrix::Zero(n, n));
  h.Ahat[0].resize(0, 0);
  h.Bhat[0].resize(0, 0);
  h.Chat[0].resize(0, 0);
  h.G = Matrix::Zero(n, m);
  return h;
}

void LinearHomogeneous::validate() const {
  if (m < 1 || n < 1 || horizon < 1) throw StructuralError("dimensions and horizon must be positive");
  const int T = horizon;
  require_shape(A, 0, T - 1, m, m, "A");
  require_shape(Abar, 0, T - 1, m, m, "Abar");
  require_shape(B, 0, T - 1, m, n, "B");
  require_shape(Bbar, 0, T - 1, m, n, "Bbar");
  require_shape(C, 0, T - 1, m, n, "C");
  require_shape(Cbar, 0, T - 1, m, n, "Cbar");
  require_shape(Ahat, 1, T, n, m, "Ahat");
  require_shape(Bhat, 1, T, n, n, "Bhat");
  require_shape(Chat, 1, T, n, n, "Chat");
  if (G.rows() != n || G.cols() != m) {
    throw StructuralError("G has shape " + shape_of(G) + ", expected " + std::to_string(n) + "x" +
                          std::to_string(m));
  }
  if (!Chat[T].isZero(0.0)) throw ValidationError("Chat_T must be zero");
  const Eigen::JacobiSVD<Matrix> svd(G);
  const auto rank = (svd.singularValues().array() > kSingularThreshold).count();
  if (rank < std::min(m, n)) {
    throw ValidationError("G must have full rank " + std::to_string(std::min(m, n)) + ", found rank " +
                          std::to_string(rank));
  }
}

LinearInhomogeneous LinearInhomogeneous::zeros(const ProbabilityTree& tree, int m, int n) {
  const int T = tree.horizon();
  return LinearInhomogeneous{AdaptedProcess(tree, 0, T - 1, m, 1), AdaptedProcess(tree, 0, T - 1, m, 1),
                             AdaptedProcess(tree, 1, T, n, 1), AdaptedProcess(tree, T, T, n, 1),
                             Vector::Zero(m)};
}

void LinearInhomogeneous::validate(const ProbabilityTree& tree, int m, int n) const {
  const int T = tree.horizon();
  require_process(D, tree, 0, T - 1, m, "D");
  require_process(Dbar, tree, 0, T - 1, m, "Dbar");
  require_process(Dhat, tree, 1, T, n, "Dhat");
  require_process(g, tree, T, T, n, "g");
  if (x0.size() != m) throw StructuralError("x0 must have " + std::to_string(m) + " components");
}

namespace {

void require_tree(const LinearHomogeneous& hom, const ProbabilityTree& tree) {
  if (tree.noise_dim() != 1) throw StructuralError("linear FBSDE solver requires a scalar driving martingale");
  if (tree.horizon() != hom.horizon) {
    throw StructuralError("coefficients have horizon " + std::to_string(hom.horizon) + " but the tree has " +
                          std::to_string(tree.horizon()));
  }
}

}  // namespace

void LinearCoefficients::validate(const ProbabilityTree& tree) const {
  hom.validate();
  require_tree(hom, tree);
  inhom.validate(tree, hom.m, hom.n);
}

SolvabilityReport check_solvability(const LinearHomogeneous& hom, double threshold) {
  hom.validate();
  Sweep s = backward_sweep(hom, threshold);
  return SolvabilityReport{std::move(s.reports), s.failed_at};
}

SolvabilityReport check_solvability(const LinearCoefficients& coeffs, const ProbabilityTree& tree,
                                    double threshold) {
  require_tree(coeffs.hom, tree);
  return check_solvability(coeffs.hom, threshold);
}

RiccatiSequence riccati_backward(const LinearCoefficients& coeffs, const ProbabilityTree& tree,
                                 double threshold) {
  coeffs.validate(tree);
  Sweep s = backward_sweep(coeffs.hom, threshold);
  RiccatiSequence r;
  r.p = offset_recursion(coeffs.hom, tree, s.P, s.lu, s.failed_at.value_or(0), coeffs.inhom);
  r.P = std::move(s.P);
  r.P[0].resize(0, 0);
  r.gamma_reports = std::move(s.reports);
  r.failed_at = s.failed_at;
  r.display_consistency = s.display_consistency;
  return r;
}

LinearSolver::LinearSolver(LinearHomogeneous hom, ProbabilityTree tree, double threshold)
    : hom_(std::move(hom)), tree_(std::move(tree)) {
  hom_.validate();
  require_tree(hom_, tree_);
  Sweep s = backward_sweep(hom_, threshold);
  report_ = SolvabilityReport{std::move(s.reports), s.failed_at};
  if (s.failed_at) {
    throw NotSolvable(*s.failed_at, report_.steps.front().min_singular_value);
  }
  P_ = std::move(s.P);
  gamma_lu_ = std::move(s.lu);
}

AdaptedProcess LinearSolver::offsets(const LinearInhomogeneous& inhom) const {
  inhom.validate(tree_, hom_.m, hom_.n);
  return offset_recursion(hom_, tree_, P_, gamma_lu_, 0, inhom);
}

FbsdeSolution LinearSolver::solve_unchecked(const LinearInhomogeneous& inhom) const {
  const AdaptedProcess p = offsets(inhom);
  const ProbabilityTree& tree = tree_;
  const LinearHomogeneous& h = hom_;
  const int T = h.horizon;
  const int m = h.m;
  const int n = h.n;
  const Matrix In = Matrix::Identity(n, n);

  FbsdeSolution sol{AdaptedProcess(tree, 0, T, m, 1), AdaptedProcess(tree, 0, T, n, 1),
                    AdaptedProcess(tree, 0, T - 1, n, 1), AdaptedProcess(tree, 0, T, n, 1), {}};
  sol.X(0, 0) = inhom.x0;

  for (int t = 0; t < T; ++t) {
    const Matrix drive = stack(Matrix::Identity(m, m) + h.A[t], h.Abar[t]);
    const Matrix Bs = stack(h.B[t], h.Bbar[t]);
    const Matrix Cs = stack(h.C[t], h.Cbar[t]);
    const Matrix& Pn = P_[t + 1];
    const IncrementDistribution& step = tree.step(t);
    for (std::size_t node = 0; node < tree.node_count(t); ++node) {
      const ChildMoments mom = child_moments(tree, p, t, node);
      const Vector rhs = drive * sol.X(t, node) + Bs * mom.mean + Cs * mom.cov +
                         stack(inhom.D(t, node), inhom.Dbar(t, node));
      const Vector uv = gamma_lu_[t].solve(rhs);
      const Vector u = uv.head(m);
      const Vector v = uv.tail(m);
      sol.Y(t, node) = Pn * u + mom.mean;
      sol.Z(t, node) = Pn * v + mom.cov;
      for (std::size_t k = 0; k < step.branches(); ++k) {
        sol.X(t + 1, tree.child(t, node, k)) = u + v * step.points[k](0);
      }
    }
  }
  for (std::size_t leaf = 0; leaf < tree.node_count(T); ++leaf) {
    sol.Y(T, leaf) = h.G * sol.X(T, leaf) + inhom.g(T, leaf);
  }

  // dN_t is what remains of lambda_{t+1} after removing its projection.
  for (int t = 0; t < T; ++t) {
    const int s = t + 1;
    const IncrementDistribution& step = tree.step(t);
    for (std::size_t node = 0; node < tree.node_count(t); ++node) {
      for (std::size_t k = 0; k < step.branches(); ++k) {
        const std::size_t c = tree.child(t, node, k);
        Vector lambda = (In - h.Bhat[s]) * sol.Y(s, c) - h.Ahat[s] * sol.X(s, c) - inhom.Dhat(s, c);
        if (s < T) lambda -= h.Chat[s] * sol.Z(s, c);
        sol.N(s, c) = sol.N(t, node) + lambda - sol.Y(t, node) - sol.Z(t, node) * step.points[k](0);
      }
    }
  }
  return sol;
}

FbsdeSolution LinearSolver::solve(const LinearInhomogeneous& inhom) const {
  FbsdeSolution sol = solve_unchecked(inhom);
  sol.residuals = linear_residual(LinearCoefficients{hom_, inhom}, tree_, sol);
  return sol;
}

FbsdeSolution solve_linear(const LinearCoefficients& coeffs, const ProbabilityTree& tree, double threshold) {
  coeffs.validate(tree);
  return LinearSolver(coeffs.hom, tree, threshold).solve(coeffs.inhom);
}

FbsdeResidualReport linear_residual(const LinearCoefficients& coeffs, const ProbabilityTree& tree,
                                    const FbsdeSolution& sol) {
  coeffs.validate(tree);
  const LinearHomogeneous& h = coeffs.hom;
  const LinearInhomogeneous& in = coeffs.inhom;
  const int T = h.horizon;
  FbsdeResidualReport r;
  for (int t = 0; t < T; ++t) {
    const int s = t + 1;
    for (std::size_t node = 0; node < tree.node_count(t); ++node) {
      const Vector& x = sol.X(t, node);
      const Vector& y = sol.Y(t, node);
      const Vector& z = sol.Z(t, node);
      const Vector drift = h.A[t] * x + h.B[t] * y + h.C[t] * z + in.D(t, node);
      const Vector vol = h.Abar[t] * x + h.Bbar[t] * y + h.Cbar[t] * z + in.Dbar(t, node);
      for (std::size_t k = 0; k < tree.branching(t); ++k) {
        const std::size_t c = tree.child(t, node, k);
        const double dw = tree.step(t).points[k](0);
        const Vector fwd = sol.X(s, c) - x - drift - vol * dw;
        r.forward = std::max(r.forward, fwd.cwiseAbs().maxCoeff());
        Vector gen = h.Ahat[s] * sol.X(s, c) + h.Bhat[s] * sol.Y(s, c) + in.Dhat(s, c);
        if (s < T) gen += h.Chat[s] * sol.Z(s, c);
        const Vector bwd = sol.Y(s, c) - y - gen - z * dw - (sol.N(s, c) - sol.N(t, node));
        r.backward = std::max(r.backward, bwd.cwiseAbs().maxCoeff());
      }
    }
  }
  r.initial = std::max((sol.X(0, 0) - in.x0).cwiseAbs().maxCoeff(), sol.N(0, 0).cwiseAbs().maxCoeff());
  for (std::size_t leaf = 0; leaf < tree.node_count(T); ++leaf) {
    const Vector term = sol.Y(T, leaf) - h.G * sol.X(T, leaf) - in.g(T, leaf);
    r.terminal = std::max(r.terminal, term.cwiseAbs().maxCoeff());
  }
  r.martingale = is_martingale(tree, sol.N).max_residual;
  r.orthogonality = is_strongly_orthogonal(tree, sol.N, 0, T - 1).max_residual;
  return r;
}

double algebraic_system_residual(const LinearCoefficients& coeffs, const ProbabilityTree& tree,
                                 const RiccatiSequence& riccati, const AdaptedProcess& X) {
  if (!riccati.solvable()) throw NotSolvable(*riccati.failed_at, riccati.gamma_reports.front().min_singular_value);
  const LinearHomogeneous& h = coeffs.hom;
  const int m = h.m;
  double worst = 0.0;
  for (int t = 0; t < h.horizon; ++t) {
    const Matrix drive = stack(Matrix::Identity(m, m) + h.A[t], h.Abar[t]);
    const Matrix Bs = stack(h.B[t], h.Bbar[t]);
    const Matrix Cs = stack(h.C[t], h.Cbar[t]);
    const Matrix& gamma = riccati.gamma_reports[static_cast<std::size_t>(t)].gamma;
    for (std::size_t node = 0; node < tree.node_count(t); ++node) {
      const ChildMoments xm = child_moments(tree, X, t, node);
      const ChildMoments pm = child_moments(tree, riccati.p, t, node);
      const Vector lhs = gamma * stack(xm.mean, xm.cov);
      const Vector rhs = drive * X(t, node) + Bs * pm.mean + Cs * pm.cov +
                         stack(coeffs.inhom.D(t, node), coeffs.inhom.Dbar(t, node));
      worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

double decoupling_residual(const ProbabilityTree& tree, const RiccatiSequence& riccati,
                           const FbsdeSolution& sol) {
  double worst = 0.0;
  for (int t = 0; t < tree.horizon(); ++t) {
    const Matrix& Pn = riccati.P[static_cast<std::size_t>(t + 1)];
    for (std::size_t node = 0; node < tree.node_count(t); ++node) {
      const ChildMoments xm = child_moments(tree, sol.X, t, node);
      const ChildMoments pm = child_moments(tree, riccati.p, t, node);
      worst = std::max(worst, (sol.Y(t, node) - Pn * xm.mean - pm.mean).cwiseAbs().maxCoeff());
      worst = std::max(worst, (sol.Z(t, node) - Pn * xm.cov - pm.cov).cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

}  // namespace fbsdelta
