#include "fbsdelta/scenario.hpp"

#include <charconv>
#include <fstream>
#include <memory>
#include <sstream>

#include "fbsdelta/model_dsl.hpp"
#include "json.hpp"

namespace fbsdelta::scenario {

using json = nlohmann::json;

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::kBsde:
      return "bsde";
    case Kind::kLinear:
      return "linear";
    case Kind::kNonlinear:
      return "nonlinear";
  }
  return "?";
}

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw SchemaError(where + ": " + what);
}

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) fail(where, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) fail(where, std::string("missing field \"") + key + "\"");
  return *it;
}

const json* optional_field(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

double number(const json& j, const std::string& where) {
  if (!j.is_number()) fail(where, "expected a number");
  return j.get<double>();
}

int integer(const json& j, const std::string& where) {
  if (!j.is_number_integer()) fail(where, "expected an integer");
  return j.get<int>();
}

double number_or(const json& obj, const char* key, double fallback, const std::string& where) {
  const json* v = optional_field(obj, key);
  return v ? number(*v, where + "." + key) : fallback;
}

int integer_or(const json& obj, const char* key, int fallback, const std::string& where) {
  const json* v = optional_field(obj, key);
  return v ? integer(*v, where + "." + key) : fallback;
}

std::vector<std::string> strings(const json& j, std::size_t count, const std::string& where) {
  if (j.is_string() && count == 1) return {j.get<std::string>()};
  if (!j.is_array() || j.size() != count) {
    fail(where, "expected an array of " + std::to_string(count) + " expression strings");
  }
  std::vector<std::string> out;
  for (const json& e : j) {
    if (!e.is_string()) fail(where, "expected expression strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::vector<dsl::Expr> expressions(const json& j, std::size_t count, const dsl::Dims& dims,
                                   const std::string& where) {
  const std::vector<std::string> texts = strings(j, count, where);
  std::vector<dsl::Expr> out;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    try {
      out.push_back(dsl::parse_expr(texts[i], dims));
    } catch (const ParseError& e) {
      fail(where + "[" + std::to_string(i) + "]", std::string(e.what()) + " in \"" + texts[i] + "\"");
    }
  }
  return out;
}

Vector vector_of(const json& j, int size, const std::string& where) {
  if (j.is_number() && size == 1) return Vector::Constant(1, j.get<double>());
  if (!j.is_array() || static_cast<int>(j.size()) != size) {
    fail(where, "expected an array of " + std::to_string(size) + " numbers");
  }
  Vector v(size);
  for (int i = 0; i < size; ++i) v(i) = number(j[static_cast<std::size_t>(i)], where);
  return v;
}

// ---------------------------------------------------------------- tree

IncrementDistribution parse_step(const json& j, const std::string& where) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "rademacher") return IncrementDistribution::rademacher();
    const std::string prefix = "trinomial(";
    if (s.rfind(prefix, 0) == 0 && s.back() == ')') {
      const std::string arg = s.substr(prefix.size(), s.size() - prefix.size() - 1);
      double p = 0.0;
      const auto res = std::from_chars(arg.data(), arg.data() + arg.size(), p);
      if (res.ec != std::errc() || res.ptr != arg.data() + arg.size()) fail(where, "bad trinomial parameter");
      if (!(p > 0.0 && p <= 0.5)) throw ValidationError(where + ": trinomial parameter must lie in (0, 1/2]");
      return IncrementDistribution::trinomial(p);
    }
    fail(where, "unknown step distribution \"" + s + "\"");
  }
  const json& pts = require(j, "points", where);
  const json& prb = require(j, "probs", where);
  if (!pts.is_array() || !prb.is_array() || pts.empty()) fail(where, "points and probs must be arrays");
  std::vector<Vector> points;
  for (const json& p : pts) {
    if (p.is_number()) {
      points.push_back(Vector::Constant(1, p.get<double>()));
    } else {
      points.push_back(vector_of(p, static_cast<int>(p.size()), where + ".points"));
    }
  }
  std::vector<double> probs;
  for (const json& p : prb) probs.push_back(number(p, where + ".probs"));
  const json* standardize = optional_field(j, "standardize");
  if (standardize && standardize->is_boolean() && standardize->get<bool>()) {
    return IncrementDistribution::standardized(std::move(points), std::move(probs));
  }
  IncrementDistribution dist{std::move(points), std::move(probs)};
  const IncrementReport rep = validate_increments(dist);
  if (!rep.ok()) throw ValidationError(where + ": " + rep.describe());
  return dist;
}

ProbabilityTree parse_tree(const json& j) {
  const std::string where = "tree";
  const int T = integer(require(j, "horizon", where), "tree.horizon");
  if (T < 1) fail("tree.horizon", "must be at least 1");
  const json& steps = require(j, "steps", where);
  std::vector<IncrementDistribution> dists;
  if (steps.is_array()) {
    if (static_cast<int>(steps.size()) != T) fail("tree.steps", "expected one entry per step");
    for (std::size_t t = 0; t < steps.size(); ++t) {
      dists.push_back(parse_step(steps[t], "tree.steps[" + std::to_string(t) + "]"));
    }
  } else {
    const IncrementDistribution d = parse_step(steps, "tree.steps");
    dists.assign(static_cast<std::size_t>(T), d);
  }
  return ProbabilityTree(std::move(dists));
}

// ---------------------------------------------------------------- coefficients

int depth(const json& j) {
  int d = 0;
  const json* p = &j;
  while (p->is_array() && !p->empty()) {
    ++d;
    p = &(*p)[0];
  }
  return d;
}

Matrix matrix_of(const json& j, int rows, int cols, const std::string& where) {
  if (j.is_number()) {
    if (rows != 1 || cols != 1) fail(where, "a bare number is only allowed for 1x1 coefficients");
    return Matrix::Constant(1, 1, j.get<double>());
  }
  if (!j.is_array() || static_cast<int>(j.size()) != rows) {
    fail(where, "expected " + std::to_string(rows) + " rows");
  }
  Matrix out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<int>(row.size()) != cols) {
      fail(where, "expected rows of " + std::to_string(cols) + " numbers");
    }
    for (int c = 0; c < cols; ++c) out(r, c) = number(row[static_cast<std::size_t>(c)], where);
  }
  return out;
}

// Entries for t in [lo, hi] of a vector of size hi + 1; missing means zero.
std::vector<Matrix> matrix_sequence(const json& coeffs, const char* key, int lo, int hi, int rows, int cols) {
  const std::string where = std::string("coefficients.") + key;
  std::vector<Matrix> out(static_cast<std::size_t>(hi + 1), Matrix::Zero(rows, cols));
  for (int t = 0; t < lo; ++t) out[static_cast<std::size_t>(t)].resize(0, 0);
  const json* j = optional_field(coeffs, key);
  if (!j) return out;
  const int dep = depth(*j);
  const bool per_time = dep == 3 || dep == 1;  // depth 1 lists 1x1 values per time
  if (per_time) {
    if (static_cast<int>(j->size()) != hi - lo + 1) {
      fail(where, "per-time list needs " + std::to_string(hi - lo + 1) + " entries");
    }
    for (int t = lo; t <= hi; ++t) {
      out[static_cast<std::size_t>(t)] =
          matrix_of((*j)[static_cast<std::size_t>(t - lo)], rows, cols, where + "[" + std::to_string(t - lo) + "]");
    }
  } else {
    const Matrix m = matrix_of(*j, rows, cols, where);
    for (int t = lo; t <= hi; ++t) out[static_cast<std::size_t>(t)] = m;
  }
  return out;
}

AdaptedProcess process_of(const json* j, const ProbabilityTree& tree, int lo, int hi, int rows,
                          const std::string& where) {
  if (!j) return AdaptedProcess(tree, lo, hi, rows, 1);
  if (j->is_number() || (j->is_array() && depth(*j) == 1)) {
    return AdaptedProcess::constant(tree, lo, hi, vector_of(*j, rows, where));
  }
  if (!j->is_object()) fail(where, "expected a constant, {\"expr\": ...} or {\"table\": ...}");
  if (const json* e = optional_field(*j, "expr")) {
    const std::vector<dsl::Expr> comps = expressions(*e, static_cast<std::size_t>(rows), dsl::Dims{0, 0, 0}, where + ".expr");
    AdaptedProcess out(tree, lo, hi, rows, 1);
    const Vector none;
    for (int t = lo; t <= hi; ++t) {
      const Vector v = dsl::eval_components(comps, t, none, none, none);
      for (Matrix& m : out.slice(t)) m = v;
    }
    return out;
  }
  if (const json* tab = optional_field(*j, "table")) {
    if (!tab->is_object()) fail(where + ".table", "expected an object keyed by time");
    AdaptedProcess out(tree, lo, hi, rows, 1);
    for (int t = lo; t <= hi; ++t) {
      const std::string tw = where + ".table[" + std::to_string(t) + "]";
      const json* slice = optional_field(*tab, std::to_string(t).c_str());
      if (!slice || !slice->is_object()) fail(tw, "missing time " + std::to_string(t));
      if (slice->size() != tree.node_count(t)) {
        fail(tw, "expected " + std::to_string(tree.node_count(t)) + " nodes, found " +
                     std::to_string(slice->size()));
      }
      for (auto it = slice->begin(); it != slice->end(); ++it) {
        const auto node = tree.find(t, it.key());
        if (!node) fail(tw, "unknown node path \"" + it.key() + "\"");
        out(t, *node) = vector_of(it.value(), rows, tw + "[\"" + it.key() + "\"]");
      }
    }
    return out;
  }
  fail(where, "expected a constant, {\"expr\": ...} or {\"table\": ...}");
}

LinearCoefficients parse_linear(const json& c, const ProbabilityTree& tree, int m, int n) {
  const int T = tree.horizon();
  LinearCoefficients lc;
  LinearHomogeneous& h = lc.hom;
  h.m = m;
  h.n = n;
  h.horizon = T;
  h.A = matrix_sequence(c, "A", 0, T - 1, m, m);
  h.Abar = matrix_sequence(c, "Abar", 0, T - 1, m, m);
  h.B = matrix_sequence(c, "B", 0, T - 1, m, n);
  h.Bbar = matrix_sequence(c, "Bbar", 0, T - 1, m, n);
  h.C = matrix_sequence(c, "C", 0, T - 1, m, n);
  h.Cbar = matrix_sequence(c, "Cbar", 0, T - 1, m, n);
  h.Ahat = matrix_sequence(c, "Ahat", 1, T, n, m);
  h.Bhat = matrix_sequence(c, "Bhat", 1, T, n, n);
  h.Chat = matrix_sequence(c, "Chat", 1, T, n, n);
  h.G = matrix_of(require(c, "G", "coefficients"), n, m, "coefficients.G");
  LinearInhomogeneous& in = lc.inhom;
  in.D = process_of(optional_field(c, "D"), tree, 0, T - 1, m, "coefficients.D");
  in.Dbar = process_of(optional_field(c, "Dbar"), tree, 0, T - 1, m, "coefficients.Dbar");
  in.Dhat = process_of(optional_field(c, "Dhat"), tree, 1, T, n, "coefficients.Dhat");
  in.g = process_of(optional_field(c, "g"), tree, T, T, n, "coefficients.g");
  in.x0 = vector_of(require(c, "x0", "coefficients"), m, "coefficients.x0");
  return lc;
}

NonlinearModel::CoefficientFn dsl_function(std::vector<dsl::Expr> comps) {
  auto shared = std::make_shared<const std::vector<dsl::Expr>>(std::move(comps));
  return [shared](int t, const Vector& x, const Vector& y, const Vector& z, NodeRef) {
    return dsl::eval_components(*shared, t, x, y, z);
  };
}

NonlinearModel parse_model(const json& j, const ProbabilityTree& tree, int m, int n) {
  const std::string where = "model";
  const dsl::Dims dims{m, n, n};
  NonlinearModel model;
  model.m = m;
  model.n = n;
  model.b = dsl_function(expressions(require(j, "b", where), m, dims, "model.b"));
  model.sigma = dsl_function(expressions(require(j, "sigma", where), m, dims, "model.sigma"));
  model.f = dsl_function(expressions(require(j, "f", where), n, dims, "model.f"));
  auto h = std::make_shared<const std::vector<dsl::Expr>>(
      expressions(require(j, "h", where), n, dsl::Dims{m, 0, 0}, "model.h"));
  const double T = tree.horizon();
  model.h = [h, T](const Vector& x, NodeRef) { return dsl::eval_components(*h, T, x, Vector(), Vector()); };
  model.G = matrix_of(require(j, "G", where), n, m, "model.G");
  model.beta1 = number(require(j, "beta1", where), "model.beta1");
  model.beta2 = number(require(j, "beta2", where), "model.beta2");
  if (const json* c = optional_field(j, "lipschitz_c")) model.lipschitz_c = number(*c, "model.lipschitz_c");
  model.x0 = vector_of(require(j, "x0", where), m, "model.x0");
  return model;
}

ContinuationConfig parse_continuation(const json* j) {
  ContinuationConfig c;
  if (!j) return c;
  const std::string w = "continuation";
  c.delta_init = number_or(*j, "delta_init", c.delta_init, w);
  c.delta_min = number_or(*j, "delta_min", c.delta_min, w);
  c.picard_tol = number_or(*j, "picard_tol", c.picard_tol, w);
  c.picard_max_iters = integer_or(*j, "picard_max_iters", c.picard_max_iters, w);
  c.inner_recursion_depth_cap = integer_or(*j, "inner_recursion_depth_cap", c.inner_recursion_depth_cap, w);
  if (const json* ws = optional_field(*j, "warm_start")) {
    const std::string s = ws->is_string() ? ws->get<std::string>() : "";
    if (s == "previous") {
      c.warm_start = WarmStart::kPreviousStage;
    } else if (s == "anchor") {
      c.warm_start = WarmStart::kAnchor;
    } else if (s == "zero") {
      c.warm_start = WarmStart::kZero;
    } else {
      fail("continuation.warm_start", "expected \"previous\", \"anchor\" or \"zero\"");
    }
  }
  return c;
}

}  // namespace

Scenario parse(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("invalid JSON: ") + e.what());
  }
  if (!root.is_object()) throw SchemaError("scenario must be a JSON object");
  const int version = integer(require(root, "schema_version", "scenario"), "schema_version");
  if (version != kSchemaVersion) {
    throw SchemaError("unsupported schema_version " + std::to_string(version));
  }
  const json& kind_j = require(root, "kind", "scenario");
  const std::string kind = kind_j.is_string() ? kind_j.get<std::string>() : "";

  Scenario sc(parse_tree(require(root, "tree", "scenario")));
  if (kind == "bsde") {
    sc.kind = Kind::kBsde;
  } else if (kind == "linear") {
    sc.kind = Kind::kLinear;
  } else if (kind == "nonlinear") {
    sc.kind = Kind::kNonlinear;
  } else {
    throw SchemaError("kind must be one of bsde, linear, nonlinear");
  }

  const json& dims = require(root, "dims", "scenario");
  sc.n = integer(require(dims, "n", "dims"), "dims.n");
  sc.m = sc.kind == Kind::kBsde ? integer_or(dims, "m", 0, "dims") : integer(require(dims, "m", "dims"), "dims.m");
  sc.d = integer_or(dims, "d", sc.tree.noise_dim(), "dims");
  if (sc.n < 1 || sc.m < 0 || (sc.kind != Kind::kBsde && sc.m < 1)) throw SchemaError("dims: bad dimensions");
  if (sc.d != sc.tree.noise_dim()) {
    throw StructuralError("dims.d = " + std::to_string(sc.d) + " but the tree increments have dimension " +
                          std::to_string(sc.tree.noise_dim()));
  }

  if (const json* s = optional_field(root, "seed")) {
    if (!s->is_number_unsigned()) throw SchemaError("seed: expected a nonnegative integer");
    sc.seed = s->get<std::uint64_t>();
  }

  const int T = sc.tree.horizon();
  switch (sc.kind) {
    case Kind::kBsde: {
      const dsl::Dims gdims{0, sc.n, sc.n * sc.d};
      auto comps = std::make_shared<const std::vector<dsl::Expr>>(
          expressions(require(root, "generator", "scenario"), static_cast<std::size_t>(sc.n), gdims, "generator"));
      Generator g;
      g.n = sc.n;
      g.d = sc.d;
      g.eval = [comps](int t, const Vector& y, const Matrix& z, NodeRef) {
        const Matrix zr = z.transpose();  // row-major flattening of z
        const Vector flat = Eigen::Map<const Vector>(zr.data(), zr.size());
        return dsl::eval_components(*comps, t, Vector(), y, flat);
      };
      if (const json* lip = optional_field(root, "lipschitz")) {
        if (const json* c1 = optional_field(*lip, "c1")) g.lipschitz_c1 = number(*c1, "lipschitz.c1");
        if (const json* c2 = optional_field(*lip, "c2")) g.lipschitz_c2 = number(*c2, "lipschitz.c2");
      }
      g.terminal_z_independent = terminal_z_dependence(sc.tree, g, 64, sc.seed) == 0.0;
      sc.generator = std::move(g);
      sc.terminal = process_of(&require(root, "terminal", "scenario"), sc.tree, T, T, sc.n, "terminal");
      break;
    }
    case Kind::kLinear:
      sc.linear = parse_linear(require(root, "coefficients", "scenario"), sc.tree, sc.m, sc.n);
      break;
    case Kind::kNonlinear: {
      sc.model = parse_model(require(root, "model", "scenario"), sc.tree, sc.m, sc.n);
      sc.continuation = parse_continuation(optional_field(root, "continuation"));
      sc.continuation.seed = sc.seed;
      break;
    }
  }

  if (const json* mono = optional_field(root, "monotone")) {
    sc.monotone.samples = integer_or(*mono, "samples", sc.monotone.samples, "monotone");
    sc.monotone.box = number_or(*mono, "box", sc.monotone.box, "monotone");
    sc.monotone.tolerance = number_or(*mono, "tolerance", sc.monotone.tolerance, "monotone");
  }
  sc.monotone.seed = sc.seed;
  sc.continuation.monotone_box = sc.monotone.box;
  sc.continuation.monotone_tolerance = sc.monotone.tolerance;

  if (const json* o = optional_field(root, "oracle")) {
    sc.newton.max_iters = integer_or(*o, "max_iters", sc.newton.max_iters, "oracle");
    sc.newton.tol = number_or(*o, "tol", sc.newton.tol, "oracle");
    sc.newton.fd_step = number_or(*o, "fd_step", sc.newton.fd_step, "oracle");
  }
  return sc;
}

Scenario load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot read scenario file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

}  // namespace fbsdelta::scenario
