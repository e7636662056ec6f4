#pragma once

#include <stdexcept>
#include <string>

namespace steingp {

/// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed text input (edge lists, configs); carries a line number when known.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, long line = -1)
        : Error(line >= 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
          line_(line) {}
    long line() const { return line_; }

private:
    long line_;
};

/// Graph fails a structural requirement (connectivity, degrees).
class ConnectivityError : public Error {
public:
    ConnectivityError(const std::string& msg, int components)
        : Error(msg), components_(components) {}
    int components() const { return components_; }

private:
    int components_;
};

/// Operand shapes do not match.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A matrix required to be symmetric positive definite failed to factorize.
class NotPositiveDefiniteError : public Error {
public:
    using Error::Error;
};

/// Fixed-point iteration given matrices with spectral radius product >= 1.
class NonContractiveError : public Error {
public:
    using Error::Error;
};

/// An iteration exceeded its step budget without meeting its tolerance.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

/// Invalid row/column selection for a submatrix operator.
class SelectionError : public Error {
public:
    using Error::Error;
};

/// Node partition incompatible with the requested model (e.g. zero-degree target).
class DegeneratePartitionError : public Error {
public:
    using Error::Error;
};

/// Operation invoked outside its supported case.
class UnsupportedCaseError : public Error {
public:
    using Error::Error;
};

/// Dense fallback requested on a problem above its size guard.
class SizeGuardError : public Error {
public:
    using Error::Error;
};

} // namespace steingp
