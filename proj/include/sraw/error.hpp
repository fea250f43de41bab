#pragma once

#include <stdexcept>
#include <string>

namespace sraw {

/// Base for every error raised by the library. `kind()` drives CLI exit codes.
class Error : public std::runtime_error {
public:
  enum class Kind { InvalidInput, DegenerateGeometry, SingularSystem, Format, Io, Parse, NumericalFailure, Usage };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

private:
  Kind kind_;
};

struct InvalidInput : Error {
  explicit InvalidInput(const std::string& w) : Error(Kind::InvalidInput, w) {}
};
struct DegenerateGeometry : Error {
  explicit DegenerateGeometry(const std::string& w) : Error(Kind::DegenerateGeometry, w) {}
};
struct SingularSystem : Error {
  explicit SingularSystem(const std::string& w) : Error(Kind::SingularSystem, w) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error(Kind::Format, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(Kind::Io, w) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error(Kind::Parse, w) {}
};
struct NumericalFailure : Error {
  NumericalFailure(const std::string& w, int iteration = -1) : Error(Kind::NumericalFailure, w), iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

private:
  int iteration_;
};
struct UsageError : Error {
  explicit UsageError(const std::string& w) : Error(Kind::Usage, w) {}
};

/// Process exit code for an error kind: 1 usage, 2 I/O or format, 3 numerical.
inline int exit_code_for(Error::Kind kind) {
  switch (kind) {
  case Error::Kind::Usage:
  case Error::Kind::InvalidInput:
    return 1;
  case Error::Kind::Io:
  case Error::Kind::Format:
  case Error::Kind::Parse:
    return 2;
  case Error::Kind::DegenerateGeometry:
  case Error::Kind::SingularSystem:
  case Error::Kind::NumericalFailure:
    return 3;
  }
  return 1;
}

} // namespace sraw
