#pragma once

#include <exception>
#include <new>
#include <stdexcept>
#include <string>

namespace cinelstm {

// Contract violations on shapes and arguments use std::invalid_argument.
// The two types below cover file-format problems and numerical failure,
// which the CLI maps to distinct exit codes.

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Process exit codes: 0 success, 2 input or configuration error, 3 numerical
// failure. Anything unexpected maps to 1.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

struct Failure {
  int exit_code = 1;
  std::string message;
};

// Call from inside a catch block.
inline Failure classify_current_exception() {
  try {
    throw;
  } catch (const NumericalError& e) {
    return {kExitNumerical, e.what()};
  } catch (const std::bad_alloc&) {
    return {1, "out of memory"};
  } catch (const std::exception& e) {
    return {kExitInput, e.what()};
  } catch (...) {
    return {1, "unknown error"};
  }
}

}  // namespace cinelstm
