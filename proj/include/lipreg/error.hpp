#pragma once

#include <stdexcept>
#include <string>

namespace lipreg {

// Bad caller-supplied values (shapes, ranges, empty batches).
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf escaped a numeric primitive; message names the offending node.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A metric that has no defined value on the given batch (e.g. single-class AUC).
struct UndefinedMetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace lipreg
