#pragma once

#include <stdexcept>
#include <string>

namespace ascfuse {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration or precondition violated by the caller.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Tensor / matrix dimensions do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Bad input data (labels out of range, missing classes, ...).
class DataError : public Error {
public:
    using Error::Error;
};

// Non-finite or structurally invalid numeric input.
class NumericError : public Error {
public:
    using Error::Error;
};

// Stage ordering / artifact problems in the pipeline.
class StageError : public Error {
public:
    using Error::Error;
};

}  // namespace ascfuse
