#pragma once

#include <stdexcept>
#include <string>

namespace stwave {

// Base class for all stwave errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Dimension / shape contract violations (mismatched operands, bad ranks).
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid argument values (bad axis, unknown branch, out-of-range counts).
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Numeric failures: non-finite values, degenerate masks, non-convergence.
class NumericError : public Error {
public:
    using Error::Error;
};

// Malformed input files, inconsistent dataset metadata.
class DataError : public Error {
public:
    using Error::Error;
};

} // namespace stwave
