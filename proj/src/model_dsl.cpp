#include "fbsdelta/model_dsl.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace fbsdelta::dsl {

Expr Expr::literal(double value) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::kLiteral;
  n->value = value;
  return Expr(std::move(n));
}

Expr Expr::variable(VarKind kind, int index) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::kVariable;
  n->var = kind;
  n->index = index;
  return Expr(std::move(n));
}

Expr Expr::negate(Expr operand) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::kNegate;
  n->args = {std::move(operand)};
  return Expr(std::move(n));
}

Expr Expr::binary(char op, Expr lhs, Expr rhs) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::kBinary;
  n->op = op;
  n->args = {std::move(lhs), std::move(rhs)};
  return Expr(std::move(n));
}

Expr Expr::call(Func func, std::vector<Expr> args) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::kCall;
  n->func = func;
  n->args = std::move(args);
  return Expr(std::move(n));
}

bool operator==(const Expr& a, const Expr& b) {
  if (a.node_ == b.node_) return true;
  if (!a.node_ || !b.node_) return false;
  const Node& x = *a.node_;
  const Node& y = *b.node_;
  if (x.kind != y.kind) return false;
  switch (x.kind) {
    case NodeKind::kLiteral:
      return x.value == y.value;
    case NodeKind::kVariable:
      return x.var == y.var && x.index == y.index;
    case NodeKind::kBinary:
      if (x.op != y.op) return false;
      break;
    case NodeKind::kCall:
      if (x.func != y.func) return false;
      break;
    case NodeKind::kNegate:
      break;
  }
  if (x.args.size() != y.args.size()) return false;
  for (std::size_t i = 0; i < x.args.size(); ++i) {
    if (!(x.args[i] == y.args[i])) return false;
  }
  return true;
}

namespace {

struct FuncInfo {
  std::string_view name;
  Func func;
  std::size_t arity;
};

constexpr FuncInfo kFunctions[] = {
    {"sin", Func::kSin, 1},  {"cos", Func::kCos, 1}, {"exp", Func::kExp, 1},
    {"tanh", Func::kTanh, 1}, {"abs", Func::kAbs, 1}, {"min", Func::kMin, 2},
    {"max", Func::kMax, 2},
};

std::string_view func_name(Func f) {
  for (const auto& info : kFunctions) {
    if (info.func == f) return info.name;
  }
  return "?";
}

class Parser {
 public:
  Parser(std::string_view text, const Dims& dims) : text_(text), dims_(dims) {}

  Expr parse() {
    Expr e = parse_expr();
    skip_ws();
    if (pos_ < text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError("syntax error: " + what, pos_); }
  [[noreturn]] void fail_at(const std::string& what, std::size_t at) const { throw ParseError(what, at); }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) {
      if (pos_ >= text_.size()) fail(std::string("expected '") + c + "' but input ended");
      fail(std::string("expected '") + c + "'");
    }
  }

  Expr parse_expr() {
    Expr lhs = parse_term();
    for (;;) {
      skip_ws();
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) {
        const char op = text_[pos_++];
        lhs = Expr::binary(op, lhs, parse_term());
      } else {
        return lhs;
      }
    }
  }

  Expr parse_term() {
    Expr lhs = parse_unary();
    for (;;) {
      skip_ws();
      if (pos_ < text_.size() && (text_[pos_] == '*' || text_[pos_] == '/')) {
        const char op = text_[pos_++];
        lhs = Expr::binary(op, lhs, parse_unary());
      } else {
        return lhs;
      }
    }
  }

  Expr parse_unary() {
    if (accept('-')) return Expr::negate(parse_unary());
    return parse_power();
  }

  Expr parse_power() {
    Expr base = parse_primary();
    if (accept('^')) return Expr::binary('^', base, parse_unary());
    return base;
  }

  Expr parse_primary() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      Expr inner = parse_expr();
      expect(')');
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
    fail("unexpected '" + std::string(1, c) + "'");
  }

  Expr parse_number() {
    const std::size_t start = pos_;
    auto digits = [&] {
      std::size_t n = 0;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        ++pos_;
        ++n;
      }
      return n;
    };
    std::size_t mantissa = digits();
    if (pos_ < text_.size() && text_[pos_] == '.') {
      ++pos_;
      mantissa += digits();
    }
    if (mantissa == 0) fail_at("syntax error: malformed number", start);
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      ++pos_;
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
      if (digits() == 0) fail("malformed exponent");
    }
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, value);
    if (ec != std::errc() || ptr != text_.data() + pos_) fail_at("syntax error: malformed number", start);
    return Expr::literal(value);
  }

  Expr parse_identifier() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
      ++pos_;
    }
    const std::string_view name = text_.substr(start, pos_ - start);

    for (const auto& info : kFunctions) {
      if (info.name != name) continue;
      expect('(');
      std::vector<Expr> args;
      if (!accept(')')) {
        do {
          args.push_back(parse_expr());
        } while (accept(','));
        expect(')');
      }
      if (args.size() != info.arity) {
        fail_at("arity error: " + std::string(name) + " takes " + std::to_string(info.arity) +
                    " argument(s), got " + std::to_string(args.size()),
                start);
      }
      return Expr::call(info.func, std::move(args));
    }

    if (name == "t") return Expr::variable(VarKind::kTime);
    if (name.size() >= 2 && (name[0] == 'x' || name[0] == 'y' || name[0] == 'z')) {
      int index = 0;
      const auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), index);
      if (ec == std::errc() && ptr == name.data() + name.size() && name[1] != '0') {
        const VarKind kind = name[0] == 'x' ? VarKind::kX : name[0] == 'y' ? VarKind::kY : VarKind::kZ;
        const int limit = kind == VarKind::kX ? dims_.m : kind == VarKind::kY ? dims_.n : dims_.z_count();
        if (index < 1 || index > limit) {
          fail_at("unknown variable '" + std::string(name) + "' (declared range " + name[0] + "1.." +
                      name[0] + std::to_string(limit) + ")",
                  start);
        }
        return Expr::variable(kind, index - 1);
      }
    }
    fail_at("unknown identifier '" + std::string(name) + "'", start);
  }

  std::string_view text_;
  Dims dims_;
  std::size_t pos_ = 0;
};

double eval_node(const Expr& e, double t, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                 const Eigen::VectorXd& z) {
  const Node& n = e.node();
  switch (n.kind) {
    case NodeKind::kLiteral:
      return n.value;
    case NodeKind::kVariable: {
      const Eigen::VectorXd* v = nullptr;
      switch (n.var) {
        case VarKind::kTime:
          return t;
        case VarKind::kX:
          v = &x;
          break;
        case VarKind::kY:
          v = &y;
          break;
        case VarKind::kZ:
          v = &z;
          break;
      }
      if (n.index >= v->size()) throw EvalError("no binding for variable " + to_string(e));
      return (*v)(n.index);
    }
    case NodeKind::kNegate:
      return -eval_node(n.args[0], t, x, y, z);
    case NodeKind::kBinary: {
      const double a = eval_node(n.args[0], t, x, y, z);
      const double b = eval_node(n.args[1], t, x, y, z);
      switch (n.op) {
        case '+':
          return a + b;
        case '-':
          return a - b;
        case '*':
          return a * b;
        case '/':
          if (b == 0.0) throw EvalError("division by zero in " + to_string(e));
          return a / b;
        case '^':
          return std::pow(a, b);
      }
      throw EvalError("unknown operator");
    }
    case NodeKind::kCall: {
      const double a = eval_node(n.args[0], t, x, y, z);
      switch (n.func) {
        case Func::kSin:
          return std::sin(a);
        case Func::kCos:
          return std::cos(a);
        case Func::kExp:
          return std::exp(a);
        case Func::kTanh:
          return std::tanh(a);
        case Func::kAbs:
          return std::abs(a);
        case Func::kMin:
          return std::min(a, eval_node(n.args[1], t, x, y, z));
        case Func::kMax:
          return std::max(a, eval_node(n.args[1], t, x, y, z));
      }
    }
  }
  throw EvalError("malformed expression");
}

// Binding strength used by the printer.
int precedence(const Expr& e) {
  const Node& n = e.node();
  switch (n.kind) {
    case NodeKind::kBinary:
      return n.op == '+' || n.op == '-' ? 1 : n.op == '^' ? 4 : 2;
    case NodeKind::kNegate:
      return 3;
    default:
      return 5;
  }
}

void print(const Expr& e, std::string& out) {
  auto wrapped = [&out](const Expr& child, bool parens) {
    if (parens) out += '(';
    print(child, out);
    if (parens) out += ')';
  };
  const Node& n = e.node();
  switch (n.kind) {
    case NodeKind::kLiteral: {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", n.value);
      std::string s(buf);
      // A negative literal only arises from programmatic construction.
      if (n.value < 0 || std::signbit(n.value)) s = "(" + s + ")";
      out += s;
      return;
    }
    case NodeKind::kVariable:
      switch (n.var) {
        case VarKind::kTime:
          out += 't';
          return;
        case VarKind::kX:
          out += 'x';
          break;
        case VarKind::kY:
          out += 'y';
          break;
        case VarKind::kZ:
          out += 'z';
          break;
      }
      out += std::to_string(n.index + 1);
      return;
    case NodeKind::kNegate:
      out += '-';
      wrapped(n.args[0], precedence(n.args[0]) < 3);
      return;
    case NodeKind::kBinary: {
      const int p = precedence(e);
      if (n.op == '^') {
        wrapped(n.args[0], precedence(n.args[0]) <= 4);
        out += '^';
        wrapped(n.args[1], precedence(n.args[1]) < 3);
        return;
      }
      wrapped(n.args[0], precedence(n.args[0]) < p);
      out += ' ';
      out += n.op;
      out += ' ';
      wrapped(n.args[1], precedence(n.args[1]) <= p);
      return;
    }
    case NodeKind::kCall:
      out += func_name(n.func);
      out += '(';
      for (std::size_t i = 0; i < n.args.size(); ++i) {
        if (i) out += ", ";
        print(n.args[i], out);
      }
      out += ')';
      return;
  }
}

}  // namespace

Expr parse_expr(std::string_view text, const Dims& dims) { return Parser(text, dims).parse(); }

double eval_expr(const Expr& e, double t, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                 const Eigen::VectorXd& z) {
  if (!e.valid()) throw EvalError("empty expression");
  return eval_node(e, t, x, y, z);
}

std::string to_string(const Expr& e) {
  std::string out;
  if (e.valid()) print(e, out);
  return out;
}

std::vector<Expr> parse_components(const std::vector<std::string>& texts, const Dims& dims) {
  std::vector<Expr> out;
  out.reserve(texts.size());
  for (const auto& s : texts) out.push_back(parse_expr(s, dims));
  return out;
}

Eigen::VectorXd eval_components(const std::vector<Expr>& comps, double t, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& y, const Eigen::VectorXd& z) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(comps.size()));
  for (std::size_t i = 0; i < comps.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = eval_expr(comps[i], t, x, y, z);
  }
  return out;
}

}  // namespace fbsdelta::dsl
