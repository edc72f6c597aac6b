#include "fbsdelta/filtration.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace fbsdelta {

NotSolvable::NotSolvable(int t, double min_singular_value)
    : Error("NotSolvable at t=" + std::to_string(t) + " (min singular value " +
            format_short_sci(min_singular_value) + ")"),
      t_(t),
      min_sv_(min_singular_value) {}

ParseError::ParseError(const std::string& message, std::size_t position)
    : Error(message + " at position " + std::to_string(position)), position_(position) {}

std::string format_short_sci(double value) {
  if (!std::isfinite(value)) return std::to_string(value);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1e", value);
  std::string s(buf);
  const auto e = s.find('e');
  if (e == std::string::npos) return s;
  int exponent = std::stoi(s.substr(e + 1));
  return s.substr(0, e + 1) + std::to_string(exponent);
}

// ---------------------------------------------------------------------------
// IncrementDistribution

IncrementDistribution IncrementDistribution::rademacher() {
  IncrementDistribution d;
  d.points = {Vector::Constant(1, -1.0), Vector::Constant(1, 1.0)};
  d.probs = {0.5, 0.5};
  return d;
}

IncrementDistribution IncrementDistribution::trinomial(double p) {
  if (!(p > 0.0 && p < 0.5)) {
    throw ValidationError("trinomial(p) requires 0 < p < 1/2, got " + std::to_string(p));
  }
  const double a = std::sqrt(1.0 / (2.0 * p));
  IncrementDistribution d;
  d.points = {Vector::Constant(1, -a), Vector::Constant(1, 0.0), Vector::Constant(1, a)};
  d.probs = {p, 1.0 - 2.0 * p, p};
  return d;
}

IncrementDistribution IncrementDistribution::standardized(std::vector<Vector> points,
                                                          std::vector<double> probs) {
  if (points.empty() || points.size() != probs.size()) {
    throw StructuralError("standardized: points and probs must be non-empty and of equal length");
  }
  const Eigen::Index d = points.front().size();
  double total = 0.0;
  for (double p : probs) total += p;
  Vector mean = Vector::Zero(d);
  for (std::size_t k = 0; k < points.size(); ++k) {
    if (points[k].size() != d) throw StructuralError("standardized: mixed point dimensions");
    probs[k] /= total;
    mean += probs[k] * points[k];
  }
  Matrix cov = Matrix::Zero(d, d);
  for (std::size_t k = 0; k < points.size(); ++k) {
    const Vector c = points[k] - mean;
    cov += probs[k] * c * c.transpose();
  }
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success || llt.matrixL().toDenseMatrix().diagonal().minCoeff() < 1e-8) {
    throw ValidationError("standardized: weighted covariance of the points is singular");
  }
  IncrementDistribution out;
  out.probs = std::move(probs);
  for (const Vector& x : points) {
    out.points.push_back(llt.matrixL().solve(x - mean));
  }
  // One refinement pass removes the rounding left by the first whitening.
  Vector mean2 = Vector::Zero(d);
  for (std::size_t k = 0; k < out.points.size(); ++k) mean2 += out.probs[k] * out.points[k];
  Matrix cov2 = Matrix::Zero(d, d);
  for (std::size_t k = 0; k < out.points.size(); ++k) {
    const Vector c = out.points[k] - mean2;
    cov2 += out.probs[k] * c * c.transpose();
  }
  Eigen::LLT<Matrix> llt2(cov2);
  for (Vector& x : out.points) x = llt2.matrixL().solve(x - mean2);
  return out;
}

std::string IncrementReport::describe() const {
  if (ok()) return "pass";
  std::ostringstream os;
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i) os << "; ";
    os << violations[i].condition << " (residual " << violations[i].residual << ")";
  }
  return os.str();
}

IncrementReport validate_increments(const IncrementDistribution& dist) {
  if (dist.points.empty()) throw StructuralError("increment distribution has no support points");
  if (dist.points.size() != dist.probs.size()) {
    throw StructuralError("increment distribution: " + std::to_string(dist.points.size()) +
                          " points but " + std::to_string(dist.probs.size()) + " probabilities");
  }
  const Eigen::Index d = dist.points.front().size();
  if (d < 1) throw StructuralError("increment distribution: points must have dimension >= 1");
  for (const Vector& p : dist.points) {
    if (p.size() != d) throw StructuralError("increment distribution: mixed point dimensions");
  }

  IncrementReport report;
  double total = 0.0;
  double min_prob = dist.probs.front();
  Vector mean = Vector::Zero(d);
  Matrix second = Matrix::Zero(d, d);
  for (std::size_t k = 0; k < dist.points.size(); ++k) {
    total += dist.probs[k];
    min_prob = std::min(min_prob, dist.probs[k]);
    mean += dist.probs[k] * dist.points[k];
    second += dist.probs[k] * dist.points[k] * dist.points[k].transpose();
  }
  if (!(min_prob > 0.0)) report.violations.push_back({"probabilities strictly positive", min_prob});
  if (std::abs(total - 1.0) > kMomentTolerance) {
    report.violations.push_back({"probabilities sum to 1", total - 1.0});
  }
  const double mean_res = mean.cwiseAbs().maxCoeff();
  if (!(mean_res <= kMomentTolerance)) {
    std::ostringstream os;
    os << "mean = " << (d == 1 ? mean(0) : mean_res) << " != 0";
    report.violations.push_back({os.str(), mean_res});
  }
  const double cov_res = (second - Matrix::Identity(d, d)).cwiseAbs().maxCoeff();
  if (!(cov_res <= kMomentTolerance)) {
    report.violations.push_back({"second moment E[dW dW^*] = I", cov_res});
  }
  return report;
}

// ---------------------------------------------------------------------------
// ProbabilityTree

ProbabilityTree::ProbabilityTree(std::vector<IncrementDistribution> steps) : steps_(std::move(steps)) {
  if (steps_.empty()) throw ValidationError("probability tree needs horizon T >= 1");
  const int d = steps_.front().dim();
  for (std::size_t t = 0; t < steps_.size(); ++t) {
    const IncrementReport r = validate_increments(steps_[t]);
    if (!r.ok()) {
      throw ValidationError("step " + std::to_string(t) + " increments invalid: " + r.describe());
    }
    if (steps_[t].dim() != d) throw ValidationError("all steps must share the noise dimension");
  }
  counts_.assign(steps_.size() + 1, 1);
  probs_.assign(steps_.size() + 1, {});
  probs_[0] = {1.0};
  for (std::size_t t = 0; t < steps_.size(); ++t) {
    const std::size_t b = steps_[t].branches();
    counts_[t + 1] = counts_[t] * b;
    probs_[t + 1].resize(counts_[t + 1]);
    for (std::size_t node = 0; node < counts_[t]; ++node) {
      for (std::size_t k = 0; k < b; ++k) {
        probs_[t + 1][node * b + k] = probs_[t][node] * steps_[t].probs[k];
      }
    }
  }
}

ProbabilityTree ProbabilityTree::uniform(int horizon, const IncrementDistribution& dist) {
  if (horizon < 1) throw ValidationError("probability tree needs horizon T >= 1");
  return ProbabilityTree(std::vector<IncrementDistribution>(static_cast<std::size_t>(horizon), dist));
}

std::size_t ProbabilityTree::total_nodes() const {
  std::size_t total = 0;
  for (std::size_t c : counts_) total += c;
  return total;
}

std::vector<std::size_t> ProbabilityTree::path(int t, std::size_t node) const {
  std::vector<std::size_t> out(static_cast<std::size_t>(t));
  for (int s = t; s >= 1; --s) {
    out[static_cast<std::size_t>(s - 1)] = outcome(s, node);
    node = parent(s, node);
  }
  return out;
}

std::string ProbabilityTree::path_label(int t, std::size_t node) const {
  std::string label;
  for (std::size_t k : path(t, node)) {
    if (!label.empty()) label += '.';
    label += std::to_string(k);
  }
  return label;
}

std::optional<std::size_t> ProbabilityTree::find(int t, std::string_view label) const {
  if (t < 0 || t > horizon()) return std::nullopt;
  std::size_t node = 0;
  int s = 0;
  std::size_t pos = 0;
  while (pos < label.size()) {
    const std::size_t dot = std::min(label.find('.', pos), label.size());
    std::size_t k = 0;
    const auto [ptr, ec] = std::from_chars(label.data() + pos, label.data() + dot, k);
    if (ec != std::errc() || ptr != label.data() + dot || s >= t || k >= branching(s)) {
      return std::nullopt;
    }
    node = child(s, node, k);
    ++s;
    pos = dot + 1;
    if (dot == label.size()) break;
    if (pos == label.size()) return std::nullopt;
  }
  if (s != t) return std::nullopt;
  return node;
}

Vector ProbabilityTree::driver_value(int t, std::size_t node) const {
  Vector w = Vector::Zero(noise_dim());
  for (int s = t; s >= 1; --s) {
    w += increment_into(s, node);
    node = parent(s, node);
  }
  return w;
}

// ---------------------------------------------------------------------------
// AdaptedProcess

AdaptedProcess::AdaptedProcess(const ProbabilityTree& tree, int t_lo, int t_hi, Eigen::Index rows,
                               Eigen::Index cols)
    : t_lo_(t_lo), t_hi_(t_hi), rows_(rows), cols_(cols) {
  if (t_lo < 0 || t_hi > tree.horizon() || t_lo > t_hi) {
    throw StructuralError("adapted process domain [" + std::to_string(t_lo) + ", " +
                          std::to_string(t_hi) + "] outside [0, " + std::to_string(tree.horizon()) +
                          "]");
  }
  slices_.reserve(static_cast<std::size_t>(t_hi - t_lo + 1));
  for (int t = t_lo; t <= t_hi; ++t) {
    slices_.emplace_back(tree.node_count(t), Matrix::Zero(rows, cols));
  }
}

AdaptedProcess AdaptedProcess::constant(const ProbabilityTree& tree, int t_lo, int t_hi,
                                        const Matrix& value) {
  AdaptedProcess p(tree, t_lo, t_hi, value.rows(), value.cols());
  for (auto& s : p.slices_) {
    for (Matrix& m : s) m = value;
  }
  return p;
}

std::vector<Matrix>& AdaptedProcess::slice(int t) {
  if (!covers(t)) {
    throw StructuralError("time " + std::to_string(t) + " outside process domain [" +
                          std::to_string(t_lo_) + ", " + std::to_string(t_hi_) + "]");
  }
  return slices_[static_cast<std::size_t>(t - t_lo_)];
}

const std::vector<Matrix>& AdaptedProcess::slice(int t) const {
  return const_cast<AdaptedProcess*>(this)->slice(t);
}

void AdaptedProcess::require_same_layout(const AdaptedProcess& other) const {
  if (t_lo_ != other.t_lo_ || t_hi_ != other.t_hi_ || rows_ != other.rows_ || cols_ != other.cols_ ||
      slices_.size() != other.slices_.size()) {
    throw StructuralError("adapted processes have different layouts");
  }
}

AdaptedProcess& AdaptedProcess::operator+=(const AdaptedProcess& other) {
  require_same_layout(other);
  for (std::size_t s = 0; s < slices_.size(); ++s) {
    for (std::size_t i = 0; i < slices_[s].size(); ++i) slices_[s][i] += other.slices_[s][i];
  }
  return *this;
}

AdaptedProcess& AdaptedProcess::operator-=(const AdaptedProcess& other) {
  require_same_layout(other);
  for (std::size_t s = 0; s < slices_.size(); ++s) {
    for (std::size_t i = 0; i < slices_[s].size(); ++i) slices_[s][i] -= other.slices_[s][i];
  }
  return *this;
}

AdaptedProcess& AdaptedProcess::operator*=(double factor) {
  for (auto& s : slices_) {
    for (Matrix& m : s) m *= factor;
  }
  return *this;
}

double sup_norm(const AdaptedProcess& x) {
  double best = 0.0;
  for (int t = x.t_lo(); x.covers(t); ++t) {
    for (const Matrix& m : x.slice(t)) {
      if (m.size() > 0) best = std::max(best, m.cwiseAbs().maxCoeff());
    }
  }
  return best;
}

double sup_distance(const AdaptedProcess& a, const AdaptedProcess& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw StructuralError("sup_distance: value shapes differ");
  }
  const int lo = std::max(a.t_lo(), b.t_lo());
  const int hi = std::min(a.t_hi(), b.t_hi());
  double best = 0.0;
  for (int t = lo; t <= hi; ++t) {
    const auto& sa = a.slice(t);
    const auto& sb = b.slice(t);
    for (std::size_t i = 0; i < sa.size(); ++i) {
      if (sa[i].size() > 0) best = std::max(best, (sa[i] - sb[i]).cwiseAbs().maxCoeff());
    }
  }
  return best;
}

double expected_square_sum(const ProbabilityTree& tree, const AdaptedProcess& x) {
  double total = 0.0;
  for (int t = x.t_lo(); x.covers(t); ++t) {
    const auto& s = x.slice(t);
    for (std::size_t i = 0; i < s.size(); ++i) total += tree.probability(t, i) * s[i].squaredNorm();
  }
  return total;
}

// ---------------------------------------------------------------------------
// Conditional expectations

namespace {

void require_step(const ProbabilityTree& tree, const AdaptedProcess& x, int t) {
  if (t < 0 || t >= tree.horizon()) {
    throw StructuralError("conditional expectation at t=" + std::to_string(t) +
                          " needs 0 <= t <= T-1");
  }
  if (!x.covers(t + 1)) {
    throw StructuralError("process is not defined at time " + std::to_string(t + 1));
  }
  if (x.node_count(t + 1) != tree.node_count(t + 1)) {
    throw StructuralError("process was built on a different tree");
  }
}

}  // namespace

AdaptedProcess conditional_expectation(const ProbabilityTree& tree, const AdaptedProcess& x, int t) {
  require_step(tree, x, t);
  AdaptedProcess out(tree, t, t, x.rows(), x.cols());
  const IncrementDistribution& step = tree.step(t);
  const auto& next = x.slice(t + 1);
  auto& cur = out.slice(t);
  for (std::size_t node = 0; node < cur.size(); ++node) {
    for (std::size_t k = 0; k < step.branches(); ++k) {
      cur[node] += step.probs[k] * next[tree.child(t, node, k)];
    }
  }
  return out;
}

AdaptedProcess conditional_increment_covariation(const ProbabilityTree& tree,
                                                 const AdaptedProcess& x, int t) {
  require_step(tree, x, t);
  if (x.cols() != 1) throw StructuralError("covariation needs a column-vector process");
  AdaptedProcess out(tree, t, t, x.rows(), tree.noise_dim());
  const IncrementDistribution& step = tree.step(t);
  const auto& next = x.slice(t + 1);
  auto& cur = out.slice(t);
  for (std::size_t node = 0; node < cur.size(); ++node) {
    for (std::size_t k = 0; k < step.branches(); ++k) {
      cur[node] += step.probs[k] * next[tree.child(t, node, k)] * step.points[k].transpose();
    }
  }
  return out;
}

ProcessCheck is_martingale(const ProbabilityTree& tree, const AdaptedProcess& x, double tol) {
  ProcessCheck check;
  for (int t = x.t_lo(); t < x.t_hi(); ++t) {
    const AdaptedProcess e = conditional_expectation(tree, x, t);
    const auto& cur = x.slice(t);
    const auto& ex = e.slice(t);
    for (std::size_t node = 0; node < cur.size(); ++node) {
      check.max_residual = std::max(check.max_residual, (ex[node] - cur[node]).cwiseAbs().maxCoeff());
    }
  }
  check.ok = check.max_residual <= tol;
  return check;
}

ProcessCheck is_strongly_orthogonal(const ProbabilityTree& tree, const AdaptedProcess& n_proc,
                                    int t_from, int t_to, double tol) {
  ProcessCheck check;
  for (int t = t_from; t <= t_to; ++t) {
    if (!n_proc.covers(t) || !n_proc.covers(t + 1)) {
      throw StructuralError("orthogonality check outside the process domain at t=" + std::to_string(t));
    }
    const IncrementDistribution& step = tree.step(t);
    const auto& cur = n_proc.slice(t);
    const auto& next = n_proc.slice(t + 1);
    for (std::size_t node = 0; node < cur.size(); ++node) {
      Matrix acc = Matrix::Zero(n_proc.rows(), tree.noise_dim());
      for (std::size_t k = 0; k < step.branches(); ++k) {
        const Matrix dn = next[tree.child(t, node, k)] - cur[node];
        acc += step.probs[k] * dn * step.points[k].transpose();
      }
      check.max_residual = std::max(check.max_residual, acc.cwiseAbs().maxCoeff());
    }
  }
  check.ok = check.max_residual <= tol;
  return check;
}

}  // namespace fbsdelta
