#pragma once

#include <stdexcept>
#include <string>

namespace ophmm {

// Base for every error raised by the library. The CLI maps each subclass to
// a distinct exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied malformed or inconsistent input (dimension mismatch,
// out-of-range index, too-short series).
class InputError : public Error {
 public:
  using Error::Error;
};

// Model parameters violate their invariants (non-PD covariance, rows that do
// not sum to one).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Numerical breakdown that scaling could not absorb.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, long index = -1)
      : Error(what), index_(index) {}

  // Offending time index (0-based), or -1 if not applicable.
  long index() const noexcept { return index_; }

 private:
  long index_;
};

// Every EM restart failed.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Delimited-text parsing failed; message carries the line number.
class IngestionError : public Error {
 public:
  IngestionError(const std::string& what, long line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  long line() const noexcept { return line_; }

 private:
  long line_;
};

// Loss periods and macro series share no usable period.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ophmm
