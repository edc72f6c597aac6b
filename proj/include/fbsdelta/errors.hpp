#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fbsdelta {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape, dimension or time-domain mismatch between inputs.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// An input violates a mathematical invariant (moment condition, rank, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// The 2m x 2m decoupling matrix at time `t` is singular.
class NotSolvable : public Error {
 public:
  NotSolvable(int t, double min_singular_value);

  int time() const { return t_; }
  double min_singular_value() const { return min_sv_; }

 private:
  int t_;
  double min_sv_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t position);

  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

class EvalError : public Error {
 public:
  using Error::Error;
};

/// Formats like "1.2e-11" / "0.0e0": one decimal, bare exponent.
std::string format_short_sci(double value);

}  // namespace fbsdelta
