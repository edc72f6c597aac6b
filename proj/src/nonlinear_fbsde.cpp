#include "fbsdelta/nonlinear_fbsde.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>

namespace fbsdelta {

void NonlinearModel::validate() const {
  if (m < 1 || n < 1) throw StructuralError("model dimensions must be positive");
  if (!b || !sigma || !f || !h) throw StructuralError("model is missing one of b, sigma, f, h");
  if (G.rows() != n || G.cols() != m) {
    throw StructuralError("G must be " + std::to_string(n) + "x" + std::to_string(m));
  }
  if (x0.size() != m) throw StructuralError("x0 must have " + std::to_string(m) + " components");
  const auto rank = (Eigen::JacobiSVD<Matrix>(G).singularValues().array() > kSingularThreshold).count();
  if (rank < std::min(m, n)) throw ValidationError("G must have full rank");
  if (!(beta1 >= 0.0) || !(beta2 >= 0.0) || !(beta1 + beta2 > 0.0)) {
    throw ValidationError("beta1, beta2 must be nonnegative with beta1 + beta2 > 0");
  }
  if (n > m && !(beta1 > 0.0)) throw ValidationError("beta1 must be positive when n > m");
  if (m > n && !(beta2 > 0.0)) throw ValidationError("beta2 must be positive when m > n");
}

NonlinearModel homotopy_coefficients(const NonlinearModel& model, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ValidationError("homotopy level must lie in [0, 1], got " + std::to_string(alpha));
  }
  NonlinearModel out = model;
  const Matrix Gt = model.G.transpose();
  const double a = alpha;
  const double c = 1.0 - alpha;
  const double b1 = model.beta1;
  const double b2 = model.beta2;
  const Matrix G = model.G;
  out.b = [a, c, b2, Gt, fn = model.b](int t, const Vector& x, const Vector& y, const Vector& z, NodeRef nd) {
    return (a * fn(t, x, y, z, nd) - c * b2 * (Gt * y)).eval();
  };
  out.sigma = [a, c, b2, Gt, fn = model.sigma](int t, const Vector& x, const Vector& y, const Vector& z,
                                               NodeRef nd) {
    return (a * fn(t, x, y, z, nd) - c * b2 * (Gt * z)).eval();
  };
  out.f = [a, c, b1, G, fn = model.f](int t, const Vector& x, const Vector& y, const Vector& z, NodeRef nd) {
    return (a * fn(t, x, y, z, nd) + c * b1 * (G * x)).eval();
  };
  out.h = [a, c, G, fn = model.h](const Vector& x, NodeRef leaf) {
    return (a * fn(x, leaf) + c * (G * x)).eval();
  };
  return out;
}

LinearHomogeneous anchor_homogeneous(const NonlinearModel& model, int horizon) {
  LinearHomogeneous h = LinearHomogeneous::zeros(model.m, model.n, horizon);
  const Matrix minus_b2_gt = -model.beta2 * model.G.transpose();
  for (int t = 0; t < horizon; ++t) {
    h.B[t] = minus_b2_gt;
    h.Cbar[t] = minus_b2_gt;
  }
  for (int t = 1; t <= horizon; ++t) h.Ahat[t] = -model.beta1 * model.G;
  h.G = model.G;
  return h;
}

void ContinuationConfig::validate() const {
  if (!(delta_min > 0.0 && delta_min <= delta_init && delta_init <= 1.0)) {
    throw ValidationError("continuation steps must satisfy 0 < delta_min <= delta_init <= 1");
  }
  if (!(picard_tol > 0.0)) throw ValidationError("picard_tol must be positive");
  if (picard_max_iters < 1) throw ValidationError("picard_max_iters must be at least 1");
  if (inner_recursion_depth_cap < 0) throw ValidationError("inner_recursion_depth_cap must be nonnegative");
  if (monotone_samples < 0) throw ValidationError("monotone_samples must be nonnegative");
}

std::string ContinuationTrace::describe() const {
  std::ostringstream os;
  os << "stage alpha delta iterations last_distance residual\n";
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const StageRecord& s = stages[k];
    char line[160];
    std::snprintf(line, sizeof line, "%zu %.17g %.17g %d %.3e %.3e", k, s.alpha, s.delta, s.iterations,
                  s.distances.empty() ? 0.0 : s.distances.back(), s.residual);
    os << line;
    if (!s.rejected_deltas.empty()) {
      os << " rejected";
      for (double d : s.rejected_deltas) {
        std::snprintf(line, sizeof line, " %.17g", d);
        os << line;
      }
    }
    os << '\n';
  }
  os << "assumption " << (assumption_verified ? "verified" : "unverified");
  if (!assumption_note.empty()) os << " (" << assumption_note << ")";
  os << '\n';
  return os.str();
}

ContinuationFailed::ContinuationFailed(const std::string& message, ContinuationTrace trace)
    : Error(message), trace_(std::move(trace)) {}

namespace {

Vector call_f(const NonlinearModel& model, int T, int t, const Vector& x, const Vector& y,
              const AdaptedProcess& Z, std::size_t node) {
  if (t == T) return model.f(t, x, y, Vector::Zero(model.n), NodeRef{t, node});
  return model.f(t, x, y, Z(t, node), NodeRef{t, node});
}

Vector checked(Vector v, Eigen::Index size, const char* name) {
  if (v.size() != size) throw StructuralError(std::string(name) + " returned a vector of the wrong size");
  return v;
}

// psi + s * phi, where x0 is taken from psi.
LinearInhomogeneous axpy(const LinearInhomogeneous& psi, double s, const LinearInhomogeneous& phi) {
  LinearInhomogeneous out{psi.D + s * phi.D, psi.Dbar + s * phi.Dbar, psi.Dhat + s * phi.Dhat,
                          psi.g + s * phi.g, psi.x0};
  return out;
}

class Continuation {
 public:
  Continuation(const NonlinearModel& model, const ProbabilityTree& tree, const ContinuationConfig& config)
      : model_(model),
        tree_(tree),
        config_(config),
        T_(tree.horizon()),
        Gt_(model.G.transpose()),
        anchor_(anchor_homogeneous(model, tree.horizon()), tree) {}

  ContinuationResult run();

 private:
  struct PicardFailure {
    std::string reason;
  };

  struct PicardOutcome {
    FbsdeSolution state;
    std::vector<double> distances;
  };

  LinearInhomogeneous phi(const FbsdeSolution& u) const;
  double distance(const FbsdeSolution& a, const FbsdeSolution& b) const;
  FbsdeSolution solve_level(std::size_t level, const LinearInhomogeneous& psi, const FbsdeSolution& warm,
                            int depth, double tol) const;
  PicardOutcome picard(std::size_t base, double gap, const LinearInhomogeneous& psi, FbsdeSolution start,
                       int depth, double tol) const;
  double stage_residual(double alpha, const FbsdeSolution& u) const;

  const NonlinearModel& model_;
  const ProbabilityTree& tree_;
  const ContinuationConfig& config_;
  int T_;
  Matrix Gt_;
  LinearSolver anchor_;
  std::vector<double> alphas_;
};

LinearInhomogeneous Continuation::phi(const FbsdeSolution& u) const {
  const int m = model_.m;
  const int n = model_.n;
  LinearInhomogeneous out = LinearInhomogeneous::zeros(tree_, m, n);
  for (int t = 0; t < T_; ++t) {
    for (std::size_t node = 0; node < tree_.node_count(t); ++node) {
      const Vector& x = u.X(t, node);
      const Vector& y = u.Y(t, node);
      const Vector& z = u.Z(t, node);
      const NodeRef ref{t, node};
      out.D(t, node) = model_.beta2 * (Gt_ * y) + checked(model_.b(t, x, y, z, ref), m, "b");
      out.Dbar(t, node) = model_.beta2 * (Gt_ * z) + checked(model_.sigma(t, x, y, z, ref), m, "sigma");
    }
  }
  for (int t = 1; t <= T_; ++t) {
    for (std::size_t node = 0; node < tree_.node_count(t); ++node) {
      const Vector& x = u.X(t, node);
      const Vector f = checked(call_f(model_, T_, t, x, u.Y(t, node), u.Z, node), n, "f");
      out.Dhat(t, node) = model_.beta1 * (model_.G * x) - f;
    }
  }
  for (std::size_t leaf = 0; leaf < tree_.node_count(T_); ++leaf) {
    const Vector& x = u.X(T_, leaf);
    out.g(T_, leaf) = checked(model_.h(x, NodeRef{T_, leaf}), n, "h") - model_.G * x;
  }
  return out;
}

double Continuation::distance(const FbsdeSolution& a, const FbsdeSolution& b) const {
  const double s = expected_square_sum(tree_, a.X - b.X) + expected_square_sum(tree_, a.Y - b.Y) +
                   expected_square_sum(tree_, a.Z - b.Z);
  return std::sqrt(s);
}

FbsdeSolution Continuation::solve_level(std::size_t level, const LinearInhomogeneous& psi,
                                        const FbsdeSolution& warm, int depth, double tol) const {
  if (level == 0) return anchor_.solve_unchecked(psi);
  if (depth > config_.inner_recursion_depth_cap) {
    return picard(0, alphas_[level], psi, warm, depth, tol).state;
  }
  return picard(level - 1, alphas_[level] - alphas_[level - 1], psi, warm, depth, tol).state;
}

Continuation::PicardOutcome Continuation::picard(std::size_t base, double gap, const LinearInhomogeneous& psi,
                                                 FbsdeSolution start, int depth, double tol) const {
  constexpr int kStallWindow = 5;
  const double inner_tol = std::max(tol * 0.1, 1e-14);
  PicardOutcome out{std::move(start), {}};
  for (int it = 0; it < config_.picard_max_iters; ++it) {
    FbsdeSolution next = solve_level(base, axpy(psi, gap, phi(out.state)), out.state, depth + 1, inner_tol);
    const double d = distance(next, out.state);
    out.distances.push_back(d);
    out.state = std::move(next);
    if (!std::isfinite(d)) throw PicardFailure{"non-finite iterate"};
    if (d <= tol) return out;
    const std::size_t k = out.distances.size();
    if (k > kStallWindow) {
      const double earlier = *std::min_element(out.distances.begin(), out.distances.end() - kStallWindow);
      if (d >= earlier) throw PicardFailure{"no contraction over " + std::to_string(kStallWindow) + " iterations"};
    }
  }
  throw PicardFailure{"iteration cap reached"};
}

double Continuation::stage_residual(double alpha, const FbsdeSolution& u) const {
  const NonlinearModel blended = homotopy_coefficients(model_, alpha);
  FbsdeSolution full = u;
  full.N = reconstruct_martingale(blended, tree_, u.X, u.Y, u.Z);
  return nonlinear_residual(blended, tree_, full).max();
}

ContinuationResult Continuation::run() {
  ContinuationTrace trace;
  MonotoneReport mono;
  if (config_.monotone_samples > 0) {
    mono = check_monotone(model_, tree_,
                          MonotoneOptions{config_.monotone_samples, config_.monotone_box,
                                          config_.monotone_tolerance, config_.seed});
    trace.assumption_verified = mono.ok;
    trace.assumption_note = mono.describe();
  } else {
    trace.assumption_note = "monotone check skipped";
  }

  const LinearInhomogeneous base_psi = [&] {
    LinearInhomogeneous z = LinearInhomogeneous::zeros(tree_, model_.m, model_.n);
    z.x0 = model_.x0;
    return z;
  }();

  alphas_ = {0.0};
  std::vector<FbsdeSolution> stage_solutions{anchor_.solve_unchecked(base_psi)};
  StageRecord anchor_record;
  anchor_record.residual = stage_residual(0.0, stage_solutions.front());
  trace.stages.push_back(anchor_record);

  const FbsdeSolution zero_state{AdaptedProcess(tree_, 0, T_, model_.m, 1), AdaptedProcess(tree_, 0, T_, model_.n, 1),
                                 AdaptedProcess(tree_, 0, T_ - 1, model_.n, 1),
                                 AdaptedProcess(tree_, 0, T_, model_.n, 1), {}};

  double delta = config_.delta_init;
  std::vector<double> rejected;
  while (alphas_.back() < 1.0) {
    const double current = alphas_.back();
    double target = current + delta;
    if (target > 1.0 - 1e-12) target = 1.0;
    const double gap = target - current;
    const FbsdeSolution& start = config_.warm_start == WarmStart::kZero     ? zero_state
                                 : config_.warm_start == WarmStart::kAnchor ? stage_solutions.front()
                                                                             : stage_solutions.back();
    try {
      PicardOutcome outcome = picard(alphas_.size() - 1, gap, base_psi, start, 0, config_.picard_tol);
      StageRecord rec;
      rec.alpha = target;
      rec.delta = gap;
      rec.iterations = static_cast<int>(outcome.distances.size());
      rec.distances = std::move(outcome.distances);
      rec.rejected_deltas = std::move(rejected);
      rejected.clear();
      rec.residual = stage_residual(target, outcome.state);
      trace.stages.push_back(std::move(rec));
      alphas_.push_back(target);
      stage_solutions.push_back(std::move(outcome.state));
    } catch (const PicardFailure& failure) {
      rejected.push_back(gap);
      delta = gap / 2.0;
      if (delta < config_.delta_min) {
        StageRecord rec;
        rec.alpha = current;
        rec.rejected_deltas = std::move(rejected);
        trace.stages.push_back(std::move(rec));
        std::ostringstream msg;
        msg << "ContinuationFailed at alpha=" << current << ": step fell below delta_min ("
            << failure.reason << ")";
        throw ContinuationFailed(msg.str(), std::move(trace));
      }
    }
  }

  FbsdeSolution sol = std::move(stage_solutions.back());
  sol.N = reconstruct_martingale(model_, tree_, sol.X, sol.Y, sol.Z);
  sol.residuals = nonlinear_residual(model_, tree_, sol);
  return ContinuationResult{std::move(sol), std::move(trace)};
}

}  // namespace

double terminal_z_dependence(const NonlinearModel& model, const ProbabilityTree& tree, int samples,
                             std::uint64_t seed, double box) {
  const int T = tree.horizon();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-box, box);
  std::uniform_int_distribution<std::size_t> pick(0, tree.node_count(T) - 1);
  auto draw = [&](int size) {
    Vector v(size);
    for (int i = 0; i < size; ++i) v(i) = unit(rng);
    return v;
  };
  double worst = 0.0;
  for (int i = 0; i < samples; ++i) {
    const NodeRef leaf{T, pick(rng)};
    const Vector x = draw(model.m), y = draw(model.n);
    const Vector diff = model.f(T, x, y, draw(model.n), leaf) - model.f(T, x, y, draw(model.n), leaf);
    worst = std::max(worst, diff.cwiseAbs().maxCoeff());
  }
  return worst;
}

ContinuationResult solve_continuation(const NonlinearModel& model, const ProbabilityTree& tree,
                                      const ContinuationConfig& config) {
  model.validate();
  config.validate();
  if (tree.noise_dim() != 1) throw StructuralError("continuation solver requires a scalar driving martingale");
  if (terminal_z_dependence(model, tree, 64, config.seed) > 0.0) {
    throw ValidationError("f must not depend on z at t = T");
  }
  return Continuation(model, tree, config).run();
}

AdaptedProcess reconstruct_martingale(const NonlinearModel& model, const ProbabilityTree& tree,
                                      const AdaptedProcess& X, const AdaptedProcess& Y, const AdaptedProcess& Z) {
  const int T = tree.horizon();
  AdaptedProcess N(tree, 0, T, model.n, 1);
  for (int t = 0; t < T; ++t) {
    const int s = t + 1;
    const IncrementDistribution& step = tree.step(t);
    for (std::size_t node = 0; node < tree.node_count(t); ++node) {
      for (std::size_t k = 0; k < step.branches(); ++k) {
        const std::size_t c = tree.child(t, node, k);
        const Vector lambda = Y(s, c) + call_f(model, T, s, X(s, c), Y(s, c), Z, c);
        N(s, c) = N(t, node) + lambda - Y(t, node) - Z(t, node) * step.points[k](0);
      }
    }
  }
  return N;
}

FbsdeResidualReport nonlinear_residual(const NonlinearModel& model, const ProbabilityTree& tree,
                                       const FbsdeSolution& sol) {
  const int T = tree.horizon();
  FbsdeResidualReport r;
  for (int t = 0; t < T; ++t) {
    const int s = t + 1;
    for (std::size_t node = 0; node < tree.node_count(t); ++node) {
      const Vector& x = sol.X(t, node);
      const Vector& y = sol.Y(t, node);
      const Vector& z = sol.Z(t, node);
      const NodeRef ref{t, node};
      const Vector drift = model.b(t, x, y, z, ref);
      const Vector vol = model.sigma(t, x, y, z, ref);
      for (std::size_t k = 0; k < tree.branching(t); ++k) {
        const std::size_t c = tree.child(t, node, k);
        const double dw = tree.step(t).points[k](0);
        r.forward = std::max(r.forward, (sol.X(s, c) - x - drift - vol * dw).cwiseAbs().maxCoeff());
        const Vector f = call_f(model, T, s, sol.X(s, c), sol.Y(s, c), sol.Z, c);
        const Vector bwd = sol.Y(s, c) - y + f - z * dw - (sol.N(s, c) - sol.N(t, node));
        r.backward = std::max(r.backward, bwd.cwiseAbs().maxCoeff());
      }
    }
  }
  r.initial = std::max((sol.X(0, 0) - model.x0).cwiseAbs().maxCoeff(), sol.N(0, 0).cwiseAbs().maxCoeff());
  for (std::size_t leaf = 0; leaf < tree.node_count(T); ++leaf) {
    const Vector term = sol.Y(T, leaf) - model.h(sol.X(T, leaf), NodeRef{T, leaf});
    r.terminal = std::max(r.terminal, term.cwiseAbs().maxCoeff());
  }
  r.martingale = is_martingale(tree, sol.N).max_residual;
  r.orthogonality = is_strongly_orthogonal(tree, sol.N, 0, T - 1).max_residual;
  return r;
}

std::string MonotoneReport::describe() const {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << (ok ? "no violation" : "violated") << " over " << samples
     << " samples, worst margin " << worst_margin;
  if (!worst_condition.empty()) os << " (" << worst_condition << ", t=" << worst_t << ")";
  return os.str();
}

MonotoneReport check_monotone(const NonlinearModel& model, const ProbabilityTree& tree,
                              const MonotoneOptions& options) {
  model.validate();
  if (options.samples < 1) throw ValidationError("monotone check needs at least one sample");
  const int T = tree.horizon();
  const int m = model.m;
  const int n = model.n;
  const Matrix& G = model.G;
  const Matrix Gt = G.transpose();

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(-options.box, options.box);
  auto draw = [&](int size) {
    Vector v(size);
    for (int i = 0; i < size; ++i) v(i) = unit(rng);
    return v;
  };
  auto pick_node = [&](int t) {
    std::uniform_int_distribution<std::size_t> pick(0, tree.node_count(t) - 1);
    return pick(rng);
  };

  MonotoneReport rep;
  rep.worst_margin = std::numeric_limits<double>::infinity();
  auto record = [&](double margin, const char* cond, int t, const Vector& l, const Vector& lp) {
    if (margin < rep.worst_margin) {
      rep.worst_margin = margin;
      rep.worst_condition = cond;
      rep.worst_t = t;
      rep.worst_lambda = l;
      rep.worst_lambda_prime = lp;
    }
  };
  auto pack = [&](const Vector& x, const Vector& y, const Vector& z) {
    Vector l(m + 2 * n);
    l << x, y, z;
    return l;
  };

  for (int i = 0; i < options.samples; ++i) {
    for (int t = 0; t < T; ++t) {
      const std::size_t node = pick_node(t);
      const NodeRef ref{t, node};
      const Vector x = draw(m), y = draw(n), z = draw(n);
      const Vector xp = draw(m), yp = draw(n), zp = draw(n);
      const Vector dx = x - xp, dy = y - yp, dz = z - zp;
      const Vector db = model.b(t, x, y, z, ref) - model.b(t, xp, yp, zp, ref);
      const Vector ds = model.sigma(t, x, y, z, ref) - model.sigma(t, xp, yp, zp, ref);
      double inner = (G * db).dot(dy) + (G * ds).dot(dz);
      double penalty = model.beta2 * ((Gt * dy).squaredNorm() + (Gt * dz).squaredNorm());
      if (t >= 1) {
        const Vector df = model.f(t, x, y, z, ref) - model.f(t, xp, yp, zp, ref);
        inner += (-Gt * df).dot(dx);
        penalty += model.beta1 * (G * dx).squaredNorm();
      }
      record(-(inner + penalty), t == 0 ? "initial" : "interior", t, pack(x, y, z), pack(xp, yp, zp));
    }
    {
      const std::size_t leaf = pick_node(T);
      const NodeRef ref{T, leaf};
      const Vector x = draw(m), xp = draw(m);
      const Vector dx = x - xp;
      const Vector hx = model.h(x, ref);
      const Vector hxp = model.h(xp, ref);
      const Vector zero = Vector::Zero(n);
      const Vector df = model.f(T, x, hx, zero, ref) - model.f(T, xp, hxp, zero, ref);
      const double final_margin = -((-Gt * df).dot(dx) + model.beta1 * (G * dx).squaredNorm());
      record(final_margin, "final", T, pack(x, hx, zero), pack(xp, hxp, zero));
      record((hx - hxp).dot(G * dx), "terminal", T, pack(x, hx, zero), pack(xp, hxp, zero));
    }
  }
  rep.samples = options.samples;
  rep.ok = rep.worst_margin >= -options.tolerance;
  return rep;
}

DualityReport duality_identity(const NonlinearModel& model_a, const FbsdeSolution& a,
                               const NonlinearModel& model_b, const FbsdeSolution& b,
                               const ProbabilityTree& tree) {
  const int T = tree.horizon();
  const Matrix& G = model_a.G;
  DualityReport rep;
  for (std::size_t leaf = 0; leaf < tree.node_count(T); ++leaf) {
    const Vector dx = a.X(T, leaf) - b.X(T, leaf);
    const Vector dy = a.Y(T, leaf) - b.Y(T, leaf);
    rep.lhs += tree.probability(T, leaf) * (G * dx).dot(dy);
  }
  for (int t = 0; t < T; ++t) {
    for (std::size_t node = 0; node < tree.node_count(t); ++node) {
      const NodeRef ref{t, node};
      const double p = tree.probability(t, node);
      const Vector db = model_a.b(t, a.X(t, node), a.Y(t, node), a.Z(t, node), ref) -
                        model_b.b(t, b.X(t, node), b.Y(t, node), b.Z(t, node), ref);
      const Vector ds = model_a.sigma(t, a.X(t, node), a.Y(t, node), a.Z(t, node), ref) -
                        model_b.sigma(t, b.X(t, node), b.Y(t, node), b.Z(t, node), ref);
      const Vector dy = a.Y(t, node) - b.Y(t, node);
      const Vector dz = a.Z(t, node) - b.Z(t, node);
      rep.rhs += p * ((G * db).dot(dy) + (G * ds).dot(dz));
    }
    const int s = t + 1;
    for (std::size_t node = 0; node < tree.node_count(s); ++node) {
      const Vector df = call_f(model_a, T, s, a.X(s, node), a.Y(s, node), a.Z, node) -
                        call_f(model_b, T, s, b.X(s, node), b.Y(s, node), b.Z, node);
      const Vector gdx = G * (a.X(s, node) - b.X(s, node));
      rep.rhs += tree.probability(s, node) * gdx.dot(-df);
    }
  }
  return rep;
}

}  // namespace fbsdelta
