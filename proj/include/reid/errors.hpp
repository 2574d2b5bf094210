#pragma once

#include <stdexcept>
#include <string>

namespace reid {

// Base of every error raised by the library. exit_code() is what the CLI
// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

// Caller broke a documented precondition (unsorted input, out-of-range value).
class ContractError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class DimError : public DataError {
 public:
  using DataError::DataError;
};

class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

// Runs f, prefixing the message of any library error with the stage name
// while keeping the error's type (and so its exit code).
template <typename F>
decltype(auto) in_stage(const std::string& stage, F&& f) {
  try {
    return f();
  } catch (const FormatError& e) {
    throw FormatError(stage + ": " + e.what());
  } catch (const DimError& e) {
    throw DimError(stage + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(stage + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(stage + ": " + e.what());
  } catch (const ContractError& e) {
    throw ContractError(stage + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(stage + ": " + e.what());
  }
}

}  // namespace reid
