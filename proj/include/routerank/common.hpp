#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace routerank {

using NodeId = std::int64_t;
using LinkId = std::int64_t;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }

// Error taxonomy. The CLI maps each class to its own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated precondition or malformed argument (exit code 2).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A required input file or artifact is absent (exit code 3).
class MissingInput : public Error {
 public:
  using Error::Error;
};

/// Schema violation or digest mismatch in an input artifact (exit code 4).
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value during training or optimization (exit code 5).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace routerank
