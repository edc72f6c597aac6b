#include "fbsdelta/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "CLI11.hpp"
#include "fbsdelta/scenario.hpp"

namespace fbsdelta::cli {

namespace {

using scenario::Kind;
using scenario::Scenario;

struct Options {
  std::string command;
  std::string file;
  std::string out_dir;
  double tol = 0.0;
  bool has_tol = false;
  std::uint64_t seed = 0;
  bool has_seed = false;
  double delta_init = 0.0;
  bool has_delta = false;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string full(double v) { return fmt("%.17g", v); }
std::string sci(double v) { return fmt("%.6e", v); }

class Usage : public Error {
 public:
  using Error::Error;
};

class Rejected : public Error {
 public:
  using Error::Error;
};

void write_csv(const std::string& dir, const std::string& name, const ProbabilityTree& tree,
               const AdaptedProcess& p) {
  std::filesystem::create_directories(dir);
  const std::string path = (std::filesystem::path(dir) / (name + ".csv")).string();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw scenario::SchemaError("cannot write " + path);
  os << "time,node";
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      os << ',' << name << (i + 1);
      if (p.cols() > 1) os << '_' << (j + 1);
    }
  }
  os << '\n';
  for (int t = p.t_lo(); t <= p.t_hi(); ++t) {
    for (std::size_t node = 0; node < p.node_count(t); ++node) {
      os << t << ',' << tree.path_label(t, node);
      const Matrix& v = p(t, node);
      for (Eigen::Index i = 0; i < v.rows(); ++i) {
        for (Eigen::Index j = 0; j < v.cols(); ++j) os << ',' << full(v(i, j));
      }
      os << '\n';
    }
  }
  if (!os) throw scenario::SchemaError("failed writing " + path);
}

void write_solution(const Options& opt, const ProbabilityTree& tree, const FbsdeSolution& sol) {
  if (opt.out_dir.empty()) return;
  write_csv(opt.out_dir, "X", tree, sol.X);
  write_csv(opt.out_dir, "Y", tree, sol.Y);
  write_csv(opt.out_dir, "Z", tree, sol.Z);
  write_csv(opt.out_dir, "N", tree, sol.N);
}

void print_residuals(std::ostream& out, const FbsdeResidualReport& r) {
  out << "residual forward " << sci(r.forward) << '\n'
      << "residual backward " << sci(r.backward) << '\n'
      << "residual initial " << sci(r.initial) << '\n'
      << "residual terminal " << sci(r.terminal) << '\n'
      << "residual martingale " << sci(r.martingale) << '\n'
      << "residual orthogonality " << sci(r.orthogonality) << '\n';
}

std::string matrix_text(const Matrix& m) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    s += i ? "; " : "";
    for (Eigen::Index j = 0; j < m.cols(); ++j) s += (j ? " " : "") + full(m(i, j));
  }
  return s + "]";
}

void print_gamma_table(std::ostream& out, const std::vector<GammaReport>& steps) {
  out << "gamma t min_singular_value invertible\n";
  for (const GammaReport& g : steps) {
    out << "gamma " << g.t << ' ' << sci(g.min_singular_value) << ' ' << (g.invertible ? "yes" : "no") << '\n';
  }
}

void require_kind(const Scenario& sc, std::initializer_list<Kind> kinds, const std::string& command) {
  if (std::find(kinds.begin(), kinds.end(), sc.kind) == kinds.end()) {
    throw Rejected(command + " does not support scenarios of kind " + scenario::to_string(sc.kind));
  }
}

void header(std::ostream& out, const Scenario& sc) {
  out << "scenario kind=" << scenario::to_string(sc.kind) << " horizon=" << sc.tree.horizon()
      << " d=" << sc.tree.noise_dim() << " m=" << sc.m << " n=" << sc.n << " nodes=" << sc.tree.total_nodes()
      << '\n';
}

int cmd_validate(const Scenario& sc, std::ostream& out) {
  header(out, sc);
  out << "tree ok\n";
  switch (sc.kind) {
    case Kind::kBsde: {
      const Generator& g = *sc.generator;
      if (!g.terminal_z_independent) throw ValidationError("generator depends on z at t = T");
      if (g.lipschitz_c1 || g.lipschitz_c2) {
        const double excess = lipschitz_spot_check(sc.tree, g, 1000, sc.seed);
        if (excess > 1e-12) throw ValidationError("declared Lipschitz constants refuted (excess " + sci(excess) + ")");
      }
      break;
    }
    case Kind::kLinear:
      sc.linear->validate(sc.tree);
      break;
    case Kind::kNonlinear:
      sc.model->validate();
      sc.continuation.validate();
      if (terminal_z_dependence(*sc.model, sc.tree, 64, sc.seed) > 0.0) {
        throw ValidationError("f depends on z at t = T");
      }
      break;
  }
  out << "coefficients ok\n";
  out << "valid\n";
  return kSuccess;
}

int cmd_solve_bsde(const Scenario& sc, const Options& opt, std::ostream& out) {
  require_kind(sc, {Kind::kBsde}, opt.command);
  header(out, sc);
  const BsdeSolution sol = solve_bsde(sc.tree, *sc.generator, sc.terminal);
  const BsdeResidualReport r = bsde_residual(sc.tree, *sc.generator, sc.terminal, sol);
  out << "Y0 " << matrix_text(sol.Y(0, 0)) << '\n';
  out << "Z0 " << matrix_text(sol.Z(0, 0)) << '\n';
  out << "N sup " << sci(sup_norm(sol.N)) << '\n';
  out << "residual equation " << sci(r.equation) << '\n'
      << "residual terminal " << sci(r.terminal) << '\n'
      << "residual initial " << sci(r.initial_n) << '\n'
      << "residual martingale " << sci(r.martingale) << '\n'
      << "residual orthogonality " << sci(r.orthogonality) << '\n';
  if (!opt.out_dir.empty()) {
    write_csv(opt.out_dir, "Y", sc.tree, sol.Y);
    write_csv(opt.out_dir, "Z", sc.tree, sol.Z);
    write_csv(opt.out_dir, "N", sc.tree, sol.N);
  }
  return kSuccess;
}

int cmd_solve_linear(const Scenario& sc, const Options& opt, std::ostream& out) {
  require_kind(sc, {Kind::kLinear}, opt.command);
  header(out, sc);
  const RiccatiSequence ric = riccati_backward(*sc.linear, sc.tree);
  print_gamma_table(out, ric.gamma_reports);
  if (!ric.solvable()) throw NotSolvable(*ric.failed_at, ric.gamma_reports.front().min_singular_value);
  for (int t = 1; t <= sc.tree.horizon(); ++t) out << "P " << t << ' ' << matrix_text(ric.P[t]) << '\n';
  const FbsdeSolution sol = solve_linear(*sc.linear, sc.tree);
  out << "Y0 " << matrix_text(sol.Y(0, 0)) << '\n';
  print_residuals(out, sol.residuals);
  write_solution(opt, sc.tree, sol);
  return kSuccess;
}

ContinuationConfig continuation_config(const Scenario& sc, const Options& opt) {
  ContinuationConfig cfg = sc.continuation;
  if (opt.has_tol) cfg.picard_tol = opt.tol;
  if (opt.has_delta) cfg.delta_init = opt.delta_init;
  cfg.delta_min = std::min(cfg.delta_min, cfg.delta_init);
  return cfg;
}

int cmd_solve_nonlinear(const Scenario& sc, const Options& opt, std::ostream& out, std::ostream& err) {
  require_kind(sc, {Kind::kNonlinear}, opt.command);
  header(out, sc);
  try {
    const ContinuationResult res = solve_continuation(*sc.model, sc.tree, continuation_config(sc, opt));
    out << res.trace.describe();
    out << "Y0 " << matrix_text(res.solution.Y(0, 0)) << '\n';
    print_residuals(out, res.solution.residuals);
    write_solution(opt, sc.tree, res.solution);
  } catch (const ContinuationFailed& e) {
    out << e.trace().describe();
    err << e.what() << '\n';
    return kNotSolvable;
  }
  return kSuccess;
}

int cmd_check_monotone(const Scenario& sc, const Options& opt, std::ostream& out) {
  require_kind(sc, {Kind::kNonlinear}, opt.command);
  header(out, sc);
  MonotoneOptions mo = sc.monotone;
  if (opt.has_tol) mo.tolerance = opt.tol;
  const MonotoneReport rep = check_monotone(*sc.model, sc.tree, mo);
  out << "monotone " << rep.describe() << '\n';
  out << "worst_margin " << sci(rep.worst_margin) << '\n';
  if (!rep.ok) {
    out << "witness lambda " << matrix_text(rep.worst_lambda.transpose()) << " lambda' "
        << matrix_text(rep.worst_lambda_prime.transpose()) << '\n';
    return kValidationFailure;
  }
  return kSuccess;
}

int cmd_compare_oracle(const Scenario& sc, const Options& opt, std::ostream& out) {
  require_kind(sc, {Kind::kLinear, Kind::kNonlinear}, opt.command);
  header(out, sc);
  const double tol = opt.has_tol ? opt.tol : 1e-6;
  FbsdeSolution solver;
  std::unique_ptr<oracle::ResidualSystem> sys;
  if (sc.kind == Kind::kLinear) {
    solver = solve_linear(*sc.linear, sc.tree);
    sys = std::make_unique<oracle::ResidualSystem>(oracle::build_residual_system(*sc.linear, sc.tree));
  } else {
    solver = solve_continuation(*sc.model, sc.tree, continuation_config(sc, opt)).solution;
    sys = std::make_unique<oracle::ResidualSystem>(oracle::build_residual_system(*sc.model, sc.tree));
  }
  const oracle::NewtonResult nr = oracle::solve_global_newton(*sys, sc.newton);
  const FbsdeSolution ref = sys->unpack(nr.v);
  const double dx = sup_distance(solver.X, ref.X);
  const double dy = sup_distance(solver.Y, ref.Y);
  const double dz = sup_distance(solver.Z, ref.Z);
  const double dn = sup_distance(solver.N, ref.N);
  const double worst = std::max({dx, dy, dz, dn});
  out << "oracle unknowns " << sys->unknowns() << " newton_iterations " << nr.trace.iterations()
      << " final_residual " << sci(nr.trace.residual_sup.back()) << '\n';
  out << "sup_difference X " << sci(dx) << '\n'
      << "sup_difference Y " << sci(dy) << '\n'
      << "sup_difference Z " << sci(dz) << '\n'
      << "sup_difference N " << sci(dn) << '\n';
  out << "max_difference " << sci(worst) << " tolerance " << sci(tol) << ' ' << (worst <= tol ? "PASS" : "FAIL")
      << '\n';
  write_solution(opt, sc.tree, solver);
  return worst <= tol ? kSuccess : kValidationFailure;
}

Options parse_args(const std::vector<std::string>& args) {
  Options opt;
  CLI::App app{"Forward-backward stochastic difference equation solver", "fbsdelta"};
  app.add_option("command", opt.command, "validate | solve-bsde | solve-linear | solve-nonlinear | "
                                         "check-monotone | compare-oracle")
      ->required()
      ->check(CLI::IsMember({"validate", "solve-bsde", "solve-linear", "solve-nonlinear", "check-monotone",
                             "compare-oracle"}));
  app.add_option("scenario", opt.file, "scenario JSON file")->required();
  app.add_option("--out", opt.out_dir, "directory for CSV tables");
  auto* tol = app.add_option("--tol", opt.tol, "comparison, Picard or monotone tolerance");
  auto* seed = app.add_option("--seed", opt.seed, "random seed for sampled checks");
  auto* delta = app.add_option("--delta-init", opt.delta_init, "initial continuation step");
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    throw Usage(app.help());
  } catch (const CLI::ParseError& e) {
    throw Usage(std::string(e.what()) + "\n" + app.help());
  }
  opt.has_tol = tol->count() > 0;
  opt.has_seed = seed->count() > 0;
  opt.has_delta = delta->count() > 0;
  return opt;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options opt;
  try {
    opt = parse_args(args);
  } catch (const Usage& e) {
    err << e.what();
    return kInputError;
  }
  try {
    Scenario sc = scenario::load_file(opt.file);
    if (opt.has_seed) {
      sc.seed = opt.seed;
      sc.monotone.seed = opt.seed;
      sc.continuation.seed = opt.seed;
    }
    if (opt.command == "validate") return cmd_validate(sc, out);
    if (opt.command == "solve-bsde") return cmd_solve_bsde(sc, opt, out);
    if (opt.command == "solve-linear") return cmd_solve_linear(sc, opt, out);
    if (opt.command == "solve-nonlinear") return cmd_solve_nonlinear(sc, opt, out, err);
    if (opt.command == "check-monotone") return cmd_check_monotone(sc, opt, out);
    return cmd_compare_oracle(sc, opt, out);
  } catch (const scenario::SchemaError& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const NotSolvable& e) {
    err << e.what() << '\n';
    return kNotSolvable;
  } catch (const ContinuationFailed& e) {
    err << e.what() << '\n';
    return kNotSolvable;
  } catch (const oracle::OracleFailed& e) {
    err << "OracleFailed: " << e.what() << '\n';
    return kNotSolvable;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kValidationFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }
}

}  // namespace fbsdelta::cli
