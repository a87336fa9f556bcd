#pragma once

#include <stdexcept>
#include <string>

namespace gesc {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes disagree (vector lengths, matrix dims, manifest vs payload).
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A scalar knob lies outside its admissible range.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// A forward or backward pass produced NaN/Inf. The message names the stage.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent on-disk data. `kind` is a stable tag for callers.
class DataError : public Error {
public:
    DataError(std::string kind, const std::string& what)
        : Error(kind + ": " + what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

}  // namespace gesc
