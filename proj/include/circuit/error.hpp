#pragma once

#include <stdexcept>
#include <string>

namespace circuit {

// Base for every error the library raises. Messages name the offending
// entity (tensor, token, component, file) so CLI output is actionable.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArchiveError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class TokenizerError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class AblationError : public Error {
 public:
  using Error::Error;
};

class SurgeryError : public Error {
 public:
  using Error::Error;
};

}  // namespace circuit
