#pragma once

#include <stdexcept>
#include <string>

namespace streetlatent {

// Base for every error raised by the library. Callers that only care about
// "something in the pipeline failed" can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class LengthMismatch : public InvalidArgument {
 public:
  LengthMismatch(std::size_t a, std::size_t b)
      : InvalidArgument("length mismatch: " + std::to_string(a) + " vs " + std::to_string(b)) {}
};

class DegenerateVector : public Error {
 public:
  using Error::Error;
};

class ParallelVectors : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Bad configuration file, override or command-line value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace streetlatent
