#pragma once

#include <stdexcept>
#include <string>

namespace ddrmpr {

/// Base of every error raised by the library. The CLI maps subclasses onto
/// stable exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor/grid dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller-supplied argument is outside its documented domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A value lies outside the domain of a formula (e.g. alpha in {0, 1}).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Operator is too large for a dense representation.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Operation needs an operator capability that is absent (e.g. a dense SVD).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// Noise schedule cannot support the requested sampling.
class ScheduleError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver stopped before reaching its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// NaN or Inf appeared in an iterate.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Malformed file or wire frame.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Peer violated the denoiser protocol (bad magic, wrong shape, ...).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Transport to a remote denoiser failed after all retries.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int attempts)
      : Error(what), attempts_(attempts) {}
  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

/// Filesystem problem (unreadable input, unwritable output).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ddrmpr
