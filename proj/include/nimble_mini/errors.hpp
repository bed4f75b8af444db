#pragma once

#include <stdexcept>
#include <string>

namespace nimble_mini {

/// Base class of every error raised by the engine.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// An articulated-body pivot (or M itself) is not invertible.
class SingularMass : public Error
{
public:
  using Error::Error;
};

class DimensionMismatch : public Error
{
public:
  using Error::Error;
};

/// A contact sits within tolerance of a change of contact kind, so its
/// geometric derivatives are not defined.
class KindBoundary : public Error
{
public:
  using Error::Error;
};

class Infeasible : public Error
{
public:
  using Error::Error;
};

class NoConvergence : public Error
{
public:
  using Error::Error;
};

/// A classification no longer yields a solution satisfying the LCP.
class StaleClassification : public Error
{
public:
  using Error::Error;
};

/// The LCP solution has rows with both zero impulse and zero velocity and no
/// subgradient policy was selected.
class TiedPresent : public Error
{
public:
  using Error::Error;
};

class DegenerateBounceRows : public Error
{
public:
  using Error::Error;
};

class NonFinite : public Error
{
public:
  using Error::Error;
};

class ShapeMismatch : public Error
{
public:
  using Error::Error;
};

class Diverged : public Error
{
public:
  using Error::Error;
};

/// Malformed scene text. `location` is "line:column".
class ParseError : public Error
{
public:
  ParseError(std::string location, std::string reason)
    : Error("parse error at " + location + ": " + reason),
      location(std::move(location)),
      reason(std::move(reason))
  {
  }

  std::string location;
  std::string reason;
};

/// Well-formed scene text describing an invalid scene.
class ValidationError : public Error
{
public:
  ValidationError(std::string field, std::string reason)
    : Error("invalid " + field + ": " + reason),
      field(std::move(field)),
      reason(std::move(reason))
  {
  }

  std::string field;
  std::string reason;
};

}  // namespace nimble_mini
