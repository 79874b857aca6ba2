#pragma once

#include <stdexcept>
#include <string>

namespace vlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A distribution or posterior description violates its invariants.
class InvalidSpecError : public Error {
public:
    using Error::Error;
};

/// Caller broke a documented precondition (shape mismatch, asymmetric input, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public Error {
public:
    using Error::Error;
};

/// An experiment precondition does not hold (e.g. expected descent is not negative).
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Non-finite value produced during an iteration.
class NumericalError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace vlab
