#pragma once

#include <stdexcept>
#include <string>

namespace vaemech {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A computation produced NaN or Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Bad user input: configuration, arguments, out-of-range indices.
/// The CLI maps this to exit code 1.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents (archives, checkpoints, JSON documents).
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace vaemech
