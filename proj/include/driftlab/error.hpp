#pragma once

#include <stdexcept>
#include <string>

namespace driftlab {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Argument outside its admissible interval (e.g. sampling time beyond K*delta).
class RangeError : public Error {
  public:
    using Error::Error;
};

/// Malformed, truncated or inconsistent file payload.
class FormatError : public Error {
  public:
    using Error::Error;
};

/// A referenced file could not be opened.
class IoError : public Error {
  public:
    using Error::Error;
};

/// Non-finite values appeared during a computation.
class NumericalError : public Error {
  public:
    using Error::Error;
};

class ShapeError : public Error {
  public:
    using Error::Error;
};

/// A quantity is undefined for the given input (zero mass, zero path length, ...).
class DegenerateError : public Error {
  public:
    using Error::Error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

} // namespace driftlab
