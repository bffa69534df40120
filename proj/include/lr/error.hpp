#pragma once

#include <stdexcept>
#include <string>

namespace lr {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Incompatible tensor shapes (dimension mismatch, non-positive output dims).
struct ShapeError : Error {
    using Error::Error;
};

// An index (class label, layer index) outside its valid range.
struct IndexError : Error {
    using Error::Error;
};

// API misuse: backward on a tensor not produced by the tape, etc.
struct UsageError : Error {
    using Error::Error;
};

// Invalid configuration value (epsilon out of range, bad percentile, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Dataset-level problems: empty set, count mismatch, bad split plan.
struct DataError : Error {
    using Error::Error;
};

// Optimizer state does not match the parameters it is applied to.
struct StateError : Error {
    using Error::Error;
};

// A tap could not be resolved against a model's activations.
struct TapError : Error {
    using Error::Error;
};

// Threshold calibration rejected its inputs.
struct CalibrationError : Error {
    using Error::Error;
};

// File / serialization failures. `kind` distinguishes the load error classes.
struct IoError : Error {
    enum class Kind { open, magic, version, header, consistency, truncated, other };
    Kind kind;
    IoError(Kind k, const std::string& what) : Error(what), kind(k) {}
};

}  // namespace lr
