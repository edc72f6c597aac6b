#pragma once

// JSON scenario files (schema_version 1). See README.md for the layout.

#include <cstdint>
#include <optional>
#include <string>

#include "fbsdelta/bsde.hpp"
#include "fbsdelta/linear_fbsde.hpp"
#include "fbsdelta/nonlinear_fbsde.hpp"
#include "fbsdelta/oracle.hpp"

namespace fbsdelta::scenario {

inline constexpr int kSchemaVersion = 1;

/// Malformed JSON, missing or mistyped fields, bad DSL text.
class SchemaError : public Error {
 public:
  using Error::Error;
};

enum class Kind { kBsde, kLinear, kNonlinear };

std::string to_string(Kind kind);

struct Scenario {
  explicit Scenario(ProbabilityTree t) : tree(std::move(t)) {}

  Kind kind = Kind::kLinear;
  ProbabilityTree tree;
  int m = 0;
  int n = 1;
  int d = 1;

  // kind == bsde
  std::optional<Generator> generator;
  AdaptedProcess terminal;

  // kind == linear
  std::optional<LinearCoefficients> linear;

  // kind == nonlinear
  std::optional<NonlinearModel> model;
  ContinuationConfig continuation;
  MonotoneOptions monotone;

  oracle::NewtonConfig newton;
  std::uint64_t seed = 0;
};

/// Throws SchemaError for syntax and schema problems, ValidationError when
/// the tree violates the moment conditions.
Scenario parse(const std::string& json_text);
/// Throws SchemaError when the file cannot be read.
Scenario load_file(const std::string& path);

}  // namespace fbsdelta::scenario
