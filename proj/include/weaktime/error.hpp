#pragma once

#include <stdexcept>
#include <string>

namespace weaktime {

// Every failure raised by the library derives from Error. The category maps
// onto the CLI exit codes: validation -> 1, numerical -> 2, io -> 3.
enum class ErrorCategory { validation, numerical, io };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

// Factor spaces or dimensions do not line up.
struct StructuralError : Error {
  explicit StructuralError(const std::string& w) : Error(ErrorCategory::validation, w) {}
};

// A physical or numerical parameter is out of its admissible range.
struct ParameterError : Error {
  explicit ParameterError(const std::string& w) : Error(ErrorCategory::validation, w) {}
};

// A precondition on an operator (Hermiticity, normalization, ...) is violated.
struct ContractError : Error {
  explicit ContractError(const std::string& w) : Error(ErrorCategory::validation, w) {}
};

struct EmptyRegionError : Error {
  explicit EmptyRegionError(const std::string& w) : Error(ErrorCategory::validation, w) {}
};

// |<chi|psi0>| fell below the overlap floor; the conditional weak value diverges.
struct DegeneratePostselectionError : Error {
  explicit DegeneratePostselectionError(const std::string& w)
      : Error(ErrorCategory::numerical, w) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& w) : Error(ErrorCategory::numerical, w) {}
};

// The pointer distribution reached the edge of the periodic pointer grid.
struct AliasingError : Error {
  explicit AliasingError(const std::string& w) : Error(ErrorCategory::numerical, w) {}
};

// The evolved packet has not left the barrier by the end of the window.
struct TimingError : Error {
  explicit TimingError(const std::string& w) : Error(ErrorCategory::validation, w) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& w) : Error(ErrorCategory::validation, w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCategory::io, w) {}
};

}  // namespace weaktime
