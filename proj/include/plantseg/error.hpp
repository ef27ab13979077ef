#pragma once

#include <stdexcept>
#include <string>

namespace plantseg {

/// Broad failure classes. The numeric values double as CLI exit codes.
enum class ErrorKind : int {
  usage = 1,
  data = 2,
  backend = 3,
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
  ErrorKind kind_;
};

class UsageError : public Error {
public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class DataError : public Error {
public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Raster or grid dimensions that cannot be processed.
class SizingError : public DataError {
public:
  explicit SizingError(const std::string& what) : DataError(what) {}
};

/// Feature set without enough spread to define a principal direction.
class RankError : public DataError {
public:
  explicit RankError(const std::string& what) : DataError(what) {}
};

class BackendError : public Error {
public:
  explicit BackendError(const std::string& what) : Error(ErrorKind::backend, what) {}
};

/// Re-raises `e` with its message prefixed by the pipeline stage name,
/// keeping the error kind so exit codes survive the wrapping.
[[noreturn]] inline void rethrow_in_stage(const std::string& stage, const Error& e) {
  throw Error(e.kind(), "[" + stage + "] " + e.what());
}

}  // namespace plantseg
