#pragma once

#include <stdexcept>
#include <string>

namespace cyclesynth {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shape or geometry problems (mismatched operands, impossible conv sizes).
class ShapeError : public Error {
public:
    using Error::Error;
};

// NaN/Inf or degenerate statistics.
class NumericError : public Error {
public:
    using Error::Error;
};

// Bad input data, I/O failures, inconsistent volumes.
class DataError : public Error {
public:
    using Error::Error;
};

class FormatError : public DataError {
public:
    enum class Kind { bad_magic, bad_version, truncated, inconsistent, bad_header };

    FormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace cyclesynth
