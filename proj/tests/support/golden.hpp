#pragma once

// Golden tables shared by the unit tests and the acceptance runner.

#include <string>
#include <vector>

#include "fbsdelta/cli.hpp"

namespace fbsdelta::golden {

struct Precedence {
  const char* text;
  double t;
  double x1;
  double y1;
  double expected;
};

// Values worked out by hand from the grammar.
inline const std::vector<Precedence>& precedence_cases() {
  static const std::vector<Precedence> cases = {
      {"1 + 2 * 3", 0, 0, 0, 7.0},
      {"(1 + 2) * 3", 0, 0, 0, 9.0},
      {"2 ^ 3 ^ 2", 0, 0, 0, 512.0},
      {"(2 ^ 3) ^ 2", 0, 0, 0, 64.0},
      {"-2 ^ 2", 0, 0, 0, -4.0},
      {"(-2) ^ 2", 0, 0, 0, 4.0},
      {"2 ^ -1", 0, 0, 0, 0.5},
      {"10 - 4 - 3", 0, 0, 0, 3.0},
      {"100 / 10 / 5", 0, 0, 0, 2.0},
      {"2 * 3 ^ 2", 0, 0, 0, 18.0},
      {"-3 * -2", 0, 0, 0, 6.0},
      {"1 - -1", 0, 0, 0, 2.0},
      {"8 / 2 * 4", 0, 0, 0, 16.0},
      {"2 + 3 * 4 ^ 2 / 8", 0, 0, 0, 8.0},
      {"-y1^2", 0, 0, 2, -4.0},
      {"2*x1 + y1", 0, 1, 3, 5.0},
      {"min(x1, 2)", 0, 5, 0, 2.0},
      {"max(1, 2) ^ 2", 0, 0, 0, 4.0},
      {"abs(-3) + tanh(y1) * 5", 0, 0, 0, 3.0},
      {"t * (x1 - 1) ^ 2", 2, 4, 0, 18.0},
  };
  return cases;
}

struct ExitCase {
  std::vector<std::string> args;
  int expected;
};

inline std::vector<ExitCase> exit_code_cases(const std::string& scenarios, const std::string& data) {
  auto s = [&](const char* name) { return scenarios + "/" + name; };
  auto d = [&](const char* name) { return data + "/" + name; };
  using namespace fbsdelta::cli;
  return {
      {{"validate", s("rademacher_linear.json")}, kSuccess},
      {{"validate", s("nonlinear_example.json")}, kSuccess},
      {{"validate", s("bsde_trinomial.json")}, kSuccess},
      {{"solve-linear", s("rademacher_linear.json")}, kSuccess},
      {{"solve-bsde", s("bsde_trinomial.json")}, kSuccess},
      {{"solve-nonlinear", s("nonlinear_example.json")}, kSuccess},
      {{"compare-oracle", s("nonlinear_example.json")}, kSuccess},
      {{"compare-oracle", s("rademacher_linear.json")}, kSuccess},
      {{"check-monotone", s("monotone_perturbed.json")}, kSuccess},
      {{"solve-linear", s("singular_linear.json")}, kNotSolvable},
      {{"compare-oracle", s("singular_linear.json")}, kNotSolvable},
      {{"solve-nonlinear", d("continuation_stall.json")}, kNotSolvable},
      {{"check-monotone", s("nonlinear_example.json")}, kValidationFailure},
      {{"compare-oracle", s("nonlinear_example.json"), "--tol", "1e-20"}, kValidationFailure},
      {{"validate", d("bad_moments.json")}, kValidationFailure},
      {{"validate", d("rank_deficient.json")}, kValidationFailure},
      {{"validate", d("z_terminal.json")}, kValidationFailure},
      {{"compare-oracle", s("bsde_trinomial.json")}, kValidationFailure},
      {{"solve-linear", s("nonlinear_example.json")}, kValidationFailure},
      {{"validate", d("malformed.json")}, kInputError},
      {{"validate", d("missing_payload.json")}, kInputError},
      {{"validate", d("bad_dsl.json")}, kInputError},
      {{"validate", d("bad_version.json")}, kInputError},
      {{"validate", d("does_not_exist.json")}, kInputError},
      {{"frobnicate", s("rademacher_linear.json")}, kInputError},
      {{"solve-linear"}, kInputError},
      {{"solve-linear", s("rademacher_linear.json"), "--tol", "abc"}, kInputError},
  };
}

/// Commands whose output (stdout, stderr and CSV tables) must be identical
/// across reruns.
inline std::vector<std::vector<std::string>> determinism_commands(const std::string& scenarios) {
  auto s = [&](const char* name) { return scenarios + "/" + name; };
  return {
      {"solve-linear", s("rademacher_linear.json")},
      {"solve-bsde", s("bsde_trinomial.json")},
      {"solve-nonlinear", s("nonlinear_example.json")},
      {"check-monotone", s("nonlinear_example.json")},
      {"compare-oracle", s("monotone_perturbed.json")},
  };
}

}  // namespace fbsdelta::golden
