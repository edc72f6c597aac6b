#pragma once

// Arithmetic expression language used in scenario files for coefficient
// functions.
//
// Grammar (lowest to highest binding):
//
//   expr    := term   (('+' | '-') term)*          left associative
//   term    := unary  (('*' | '/') unary)*         left associative
//   unary   := '-' unary | power
//   power   := primary ('^' unary)?                right associative
//   primary := number | variable | func '(' expr (',' expr)* ')' | '(' expr ')'
//
// Unary minus binds looser than '^', so "-y1^2" is -(y1^2) and "2^-1" is 0.5.
// Variables: t, x1..xm, y1..yn, z1..zk (k = n unless set otherwise).
// Functions: sin cos exp tanh abs (one argument), min max (two arguments).

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "fbsdelta/errors.hpp"

namespace fbsdelta::dsl {

/// Declared variable ranges an expression may reference.
struct Dims {
  int m = 0;
  int n = 0;
  int z = -1;  ///< number of z variables; -1 means "same as n"

  int z_count() const { return z < 0 ? n : z; }
};

enum class VarKind { kTime, kX, kY, kZ };

enum class Func { kSin, kCos, kExp, kTanh, kAbs, kMin, kMax };

struct Node;

/// Immutable expression tree; copies share structure.
class Expr {
 public:
  Expr() = default;

  static Expr literal(double value);
  static Expr variable(VarKind kind, int index = 0);
  static Expr negate(Expr operand);
  static Expr binary(char op, Expr lhs, Expr rhs);
  static Expr call(Func func, std::vector<Expr> args);

  const Node& node() const { return *node_; }
  bool valid() const { return static_cast<bool>(node_); }

  friend bool operator==(const Expr& a, const Expr& b);

 private:
  explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

enum class NodeKind { kLiteral, kVariable, kNegate, kBinary, kCall };

struct Node {
  NodeKind kind = NodeKind::kLiteral;
  double value = 0.0;
  VarKind var = VarKind::kTime;
  int index = 0;  ///< zero-based variable index
  char op = 0;    ///< one of + - * / ^
  Func func = Func::kSin;
  std::vector<Expr> args;
};

/// Throws ParseError (with 0-based character position) on syntax errors,
/// unknown identifiers, out-of-range variables and wrong arities.
Expr parse_expr(std::string_view text, const Dims& dims);

/// Throws EvalError on division by zero (naming the subexpression) or when a
/// binding is missing.
double eval_expr(const Expr& e, double t, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                 const Eigen::VectorXd& z);

/// Minimal-parenthesis rendering; parse_expr(to_string(e)) == e for every
/// tree parse_expr can produce.
std::string to_string(const Expr& e);

/// Parses one expression per component.
std::vector<Expr> parse_components(const std::vector<std::string>& texts, const Dims& dims);

/// Evaluates a list of component expressions into a vector.
Eigen::VectorXd eval_components(const std::vector<Expr>& comps, double t, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& y, const Eigen::VectorXd& z);

}  // namespace fbsdelta::dsl
