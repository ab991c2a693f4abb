#pragma once

#include <stdexcept>
#include <string>

namespace signtok {

// Exit codes used by the command line front end.
enum class ExitCode : int { ok = 0, usage = 2, data = 3, numeric = 4 };

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const { return ExitCode::data; }
};

// Malformed or missing input files, bad records.
class DataError : public Error {
 public:
  using Error::Error;
};

// Incompatible tensor shapes; message names the op and the shapes involved.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or failed numerical checks.
class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::numeric; }
};

class UsageError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::usage; }
};

}  // namespace signtok
