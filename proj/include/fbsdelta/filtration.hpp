#pragma once

// Finite filtered probability spaces generated by per-step martingale
// increments, adapted processes on them, and the exact conditional
// expectation operators every solver in this library is built on.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "fbsdelta/errors.hpp"

namespace fbsdelta {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kMomentTolerance = 1e-12;
inline constexpr double kProcessTolerance = 1e-10;

/// Finite-support law of one increment dW_t in R^d.
struct IncrementDistribution {
  std::vector<Vector> points;
  std::vector<double> probs;

  int dim() const { return points.empty() ? 0 : static_cast<int>(points.front().size()); }
  std::size_t branches() const { return points.size(); }

  /// Points -1, +1 with probability 1/2 each.
  static IncrementDistribution rademacher();
  /// Points -sqrt(1/(2p)), 0, +sqrt(1/(2p)) with probabilities p, 1-2p, p.
  static IncrementDistribution trinomial(double p);
  /// Recentres and whitens arbitrary points so that the result has mean 0 and
  /// identity covariance under `probs`. Throws ValidationError when the
  /// weighted covariance is singular.
  static IncrementDistribution standardized(std::vector<Vector> points, std::vector<double> probs);
};

struct MomentViolation {
  std::string condition;
  double residual = 0.0;
};

struct IncrementReport {
  std::vector<MomentViolation> violations;

  bool ok() const { return violations.empty(); }
  std::string describe() const;
};

/// Checks positivity, normalisation, zero mean and identity second moment.
/// Throws StructuralError on empty support, length or dimension mismatch.
IncrementReport validate_increments(const IncrementDistribution& dist);

/// Position of a node: time and index in the lexicographic order of outcome
/// sequences at that time.
struct NodeRef {
  int t = 0;
  std::size_t index = 0;
};

class ProbabilityTree {
 public:
  /// One distribution per step; steps[t] governs dW_t. Throws ValidationError
  /// if any step fails validate_increments or the dimensions differ.
  explicit ProbabilityTree(std::vector<IncrementDistribution> steps);

  static ProbabilityTree uniform(int horizon, const IncrementDistribution& dist);

  int horizon() const { return static_cast<int>(steps_.size()); }
  int noise_dim() const { return steps_.front().dim(); }
  const IncrementDistribution& step(int t) const { return steps_.at(static_cast<std::size_t>(t)); }
  std::size_t branching(int t) const { return step(t).branches(); }

  std::size_t node_count(int t) const { return counts_.at(static_cast<std::size_t>(t)); }
  std::size_t total_nodes() const;

  std::size_t child(int t, std::size_t node, std::size_t k) const {
    return node * branching(t) + k;
  }
  /// Parent (at t-1) of a node at time t >= 1.
  std::size_t parent(int t, std::size_t node) const { return node / branching(t - 1); }
  /// Outcome index of the last step leading into a node at time t >= 1.
  std::size_t outcome(int t, std::size_t node) const { return node % branching(t - 1); }
  /// dW_{t-1} realised on the way into a node at time t >= 1.
  const Vector& increment_into(int t, std::size_t node) const {
    return step(t - 1).points[outcome(t, node)];
  }

  double probability(int t, std::size_t node) const { return probs_.at(static_cast<std::size_t>(t))[node]; }

  std::vector<std::size_t> path(int t, std::size_t node) const;
  /// Dot-separated outcome indices, e.g. "0.2.1"; the root is "".
  std::string path_label(int t, std::size_t node) const;
  std::optional<std::size_t> find(int t, std::string_view label) const;

  /// W_t at a node with W_0 = 0.
  Vector driver_value(int t, std::size_t node) const;

 private:
  std::vector<IncrementDistribution> steps_;
  std::vector<std::size_t> counts_;
  std::vector<std::vector<double>> probs_;
};

/// A matrix-valued process with one value per node at every time of a
/// contiguous range [t_lo, t_hi].
class AdaptedProcess {
 public:
  AdaptedProcess() = default;
  AdaptedProcess(const ProbabilityTree& tree, int t_lo, int t_hi, Eigen::Index rows,
                 Eigen::Index cols = 1);

  static AdaptedProcess constant(const ProbabilityTree& tree, int t_lo, int t_hi,
                                 const Matrix& value);

  int t_lo() const { return t_lo_; }
  int t_hi() const { return t_hi_; }
  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  bool covers(int t) const { return !slices_.empty() && t >= t_lo_ && t <= t_hi_; }
  bool empty() const { return slices_.empty(); }
  std::size_t node_count(int t) const { return slice(t).size(); }

  Matrix& operator()(int t, std::size_t node) { return slice(t)[node]; }
  const Matrix& operator()(int t, std::size_t node) const { return slice(t)[node]; }
  Matrix& at(NodeRef ref) { return (*this)(ref.t, ref.index); }
  const Matrix& at(NodeRef ref) const { return (*this)(ref.t, ref.index); }

  std::vector<Matrix>& slice(int t);
  const std::vector<Matrix>& slice(int t) const;

  AdaptedProcess& operator+=(const AdaptedProcess& other);
  AdaptedProcess& operator-=(const AdaptedProcess& other);
  AdaptedProcess& operator*=(double factor);

  friend AdaptedProcess operator+(AdaptedProcess a, const AdaptedProcess& b) { return a += b; }
  friend AdaptedProcess operator-(AdaptedProcess a, const AdaptedProcess& b) { return a -= b; }
  friend AdaptedProcess operator*(double s, AdaptedProcess a) { return a *= s; }

 private:
  void require_same_layout(const AdaptedProcess& other) const;

  int t_lo_ = 0;
  int t_hi_ = -1;
  Eigen::Index rows_ = 0;
  Eigen::Index cols_ = 0;
  std::vector<std::vector<Matrix>> slices_;
};

/// Largest absolute entry over all nodes and times.
double sup_norm(const AdaptedProcess& x);
/// sup_norm(a - b) over the common time range; layouts must agree there.
double sup_distance(const AdaptedProcess& a, const AdaptedProcess& b);
/// E[ sum over the domain of |x_t|^2 ] with Frobenius norms.
double expected_square_sum(const ProbabilityTree& tree, const AdaptedProcess& x);

/// E[x_{t+1} | F_t] as a process living only at time t.
AdaptedProcess conditional_expectation(const ProbabilityTree& tree, const AdaptedProcess& x, int t);

/// E[x_{t+1} dW_t^* | F_t] for x of shape (n, 1); result has shape (n, d).
AdaptedProcess conditional_increment_covariation(const ProbabilityTree& tree,
                                                 const AdaptedProcess& x, int t);

struct ProcessCheck {
  bool ok = true;
  double max_residual = 0.0;
};

/// Martingale test over the whole domain of x, tolerance kProcessTolerance
/// unless overridden.
ProcessCheck is_martingale(const ProbabilityTree& tree, const AdaptedProcess& x,
                           double tol = kProcessTolerance);

/// E[dN_t dW_t^* | F_t] = 0 for t in [t_from, t_to].
ProcessCheck is_strongly_orthogonal(const ProbabilityTree& tree, const AdaptedProcess& n_proc,
                                    int t_from, int t_to, double tol = kProcessTolerance);

}  // namespace fbsdelta
