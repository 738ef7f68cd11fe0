#pragma once

#include <stdexcept>
#include <string>

namespace bidesign {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid model definition (non-PD covariance, bad dimensions).
class ModelError : public Error {
 public:
  using Error::Error;
};

/// A simulated state or measurement became non-finite.
class SimulationDivergence : public Error {
 public:
  SimulationDivergence(std::size_t path, std::size_t time, const std::string& what)
      : Error(what), path_(path), time_(time) {}
  std::size_t path() const { return path_; }
  std::size_t time() const { return time_; }

 private:
  std::size_t path_;
  std::size_t time_;
};

/// The information matrix or its Schur complement lost positive definiteness.
class BoundDegeneracy : public Error {
 public:
  BoundDegeneracy(const std::string& what, double eigenvalue)
      : Error(what), eigenvalue_(eigenvalue) {}
  double eigenvalue() const { return eigenvalue_; }

 private:
  double eigenvalue_;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Template parameters with the wrong arity or outside the unit box.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// An input value that does not lie on the discretized grid.
class EncodingError : public Error {
 public:
  using Error::Error;
};

/// A Markov input policy that breaks the window-overlap structure or is not stochastic.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Particle weights collapsed in the sequential Monte-Carlo estimator.
class DegeneracyError : public Error {
 public:
  DegeneracyError(std::size_t time, const std::string& what) : Error(what), time_(time) {}
  std::size_t time() const { return time_; }

 private:
  std::size_t time_;
};

/// An oracle was applied outside its domain (e.g. Kalman oracle on a nonlinear model).
class OracleMisuse : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

}  // namespace bidesign
