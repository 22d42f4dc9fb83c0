#pragma once

#include <stdexcept>
#include <string>

namespace htar {

/// Precondition or shape violation in a call to the library.
class InvalidArgument : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input data (series files, model files, configs).
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure failed: singular systems, divergence, non-finite values.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace htar
