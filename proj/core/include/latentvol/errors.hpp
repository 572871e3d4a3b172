#pragma once

#include <stdexcept>
#include <string>

namespace latentvol {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File missing or unreadable.
class IoError : public Error {
 public:
  using Error::Error;
};

/// File present but corrupt, truncated or in an unsupported format.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Shapes that do not fit together (indivisible sizes, mismatched grids, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside of an operation's domain.
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration; the CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or intermediate; the CLI maps this to exit code 3.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Unknown study, reader, volume or other referenced entity.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Attempt to create an entity that already exists.
class ConflictError : public Error {
 public:
  using Error::Error;
};

}  // namespace latentvol
