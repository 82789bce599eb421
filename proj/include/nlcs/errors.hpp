#pragma once

#include <stdexcept>
#include <string>

namespace nlcs {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

class InvalidDimension : public Error {
 public:
  using Error::Error;
};

/// Requested structure cannot exist (e.g. separation too tight for p).
class ConstraintInfeasible : public Error {
 public:
  using Error::Error;
};

class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class UnboundedProblem : public Error {
 public:
  using Error::Error;
};

/// Operation not defined for the given observation model or signal kind.
class ModelMismatch : public Error {
 public:
  using Error::Error;
};

class FitImpossible : public Error {
 public:
  using Error::Error;
};

/// Config validation failure; `path()` is a JSON-pointer-like field path.
class SchemaError : public Error {
 public:
  SchemaError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

}  // namespace nlcs
