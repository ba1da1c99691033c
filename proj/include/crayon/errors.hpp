#pragma once

#include <stdexcept>
#include <string>

namespace crayon {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes or dimensions do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A count argument is out of range (k > M, empty input, ...).
class CountError : public Error {
 public:
  using Error::Error;
};

// A vector with zero norm reached an operation that needs a direction.
class ZeroVectorError : public Error {
 public:
  using Error::Error;
};

// A token id, sequence length or similar argument is out of range.
class RangeError : public Error {
 public:
  using Error::Error;
};

// A NaN or infinity was produced where finite values are required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// A file or wire message could not be parsed.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A file or message declares an unsupported format/protocol version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Declared metadata disagrees with the payload; the message names the field.
class MismatchError : public Error {
 public:
  using Error::Error;
};

// Client and server disagree on which pool they hold.
class ChecksumMismatchError : public MismatchError {
 public:
  using MismatchError::MismatchError;
};

// Decoding produced no tokens where at least one is required.
class EmptyGenerationError : public Error {
 public:
  using Error::Error;
};

}  // namespace crayon
