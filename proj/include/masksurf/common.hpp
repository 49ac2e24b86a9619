#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace masksurf {

#ifdef MASKSURF_FLOAT32
using Real = float;
#else
using Real = double;
#endif

using Vec3 = Eigen::Vector3d;

// Error taxonomy shared by every module. All derive from std::runtime_error
// so callers that only care about "something failed" can catch one type.

/// Precondition on an argument (count, shape, ratio) was violated.
class InvalidArgument : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data is unusable: non-finite coordinates, degenerate meshes,
/// missing attributes.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A text file or config could not be parsed. Carries the 1-based line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// A computation produced NaN/Inf where a finite value was required.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace masksurf
