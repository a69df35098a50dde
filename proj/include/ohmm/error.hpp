#pragma once

#include <stdexcept>
#include <string>

namespace ohmm {

/// Failure category. The numeric values are the CLI exit codes.
enum class ErrorKind : int {
    invalid_argument = 1,
    numerical = 2,
    io = 3,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Bad input: invalid points, kind mismatches, malformed parameters or config.
class InvalidArgument : public Error {
public:
    explicit InvalidArgument(const std::string& what)
        : Error(ErrorKind::invalid_argument, what) {}
};

/// Non-convergence, underflow, zero denominators.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what)
        : Error(ErrorKind::numerical, what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

} // namespace ohmm
