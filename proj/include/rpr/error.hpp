#pragma once

#include <stdexcept>
#include <string>

namespace rpr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or inconsistent arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A classifier could not be fitted on the supplied data.
class FitError : public Error {
 public:
  using Error::Error;
};

/// A linear solve or other numeric routine failed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File could not be read, written or parsed.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace rpr
