#pragma once

#include <stdexcept>
#include <string>

namespace halobit {

// Base for every error the library raises. Callers that only want to report
// and exit can catch this; the subclasses let tests and the CLI tell the
// failure classes apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class CodecError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace halobit
