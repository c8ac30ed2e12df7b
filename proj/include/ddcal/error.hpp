#pragma once

#include <stdexcept>
#include <string>

namespace ddcal {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform to a primitive.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf produced or consumed somewhere it must not be.
class NumericError : public Error {
public:
    using Error::Error;
};

/// API misuse: bad arguments, out-of-range hyperparameters, double normalization.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Malformed on-disk data.
class FormatError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input is well formed but mathematically degenerate (zero denominators, all-zero matrices).
class DegenerateError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace ddcal
