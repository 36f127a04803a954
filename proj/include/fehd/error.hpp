#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fehd {

// Broad failure categories; the C API maps each onto a status code.
enum class ErrorKind {
  InvalidArgument,
  Parse,
  Io,
  Data,
  Estimation,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Formula syntax error. `offset` is the byte position in the formula text.
class FormulaError : public Error {
 public:
  FormulaError(const std::string& what, std::size_t offset)
      : Error(ErrorKind::Parse, what + " (at offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

inline Error invalid_argument(const std::string& msg) { return {ErrorKind::InvalidArgument, msg}; }
inline Error io_error(const std::string& msg) { return {ErrorKind::Io, msg}; }
inline Error data_error(const std::string& msg) { return {ErrorKind::Data, msg}; }
inline Error estimation_error(const std::string& msg) { return {ErrorKind::Estimation, msg}; }

}  // namespace fehd
