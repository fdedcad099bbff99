#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nilm {

// Root of every error thrown by the library. The CLI maps subclasses onto
// exit codes (usage 1, data 2, numeric divergence 3).
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
   public:
    using Error::Error;
};

class DomainError : public Error {
   public:
    using Error::Error;
};

// A softmax row with no admissible entry, or a one-token sequence under
// diagonal masking.
class DegenerateError : public Error {
   public:
    using Error::Error;
};

class NumericError : public Error {
   public:
    using Error::Error;
};

class DataError : public Error {
   public:
    using Error::Error;
};

class ParseError : public DataError {
   public:
    ParseError(const std::string& what, std::size_t line)
        : DataError(what + " (line " + std::to_string(line) + ")"), line_(line) {}

    std::size_t line() const { return line_; }

   private:
    std::size_t line_;
};

class UsageError : public Error {
   public:
    using Error::Error;
};

}  // namespace nilm
