#ifndef ASSIST_CORE_ERROR_HPP_
#define ASSIST_CORE_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace assist {

// Caller violated a documented precondition (bad shape, bad count, bad id).
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced NaN/Inf or failed to converge.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file or payload.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw PreconditionError(message);
}

}  // namespace assist

#endif  // ASSIST_CORE_ERROR_HPP_
