#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace maa {

// Accumulator type for reductions: float math accumulates in double;
// wider types accumulate in themselves.
template <typename T>
using acc_t = std::conditional_t<std::is_same_v<T, float>, double, T>;

// Shape/dimension mismatches between matrices or between data and config.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or truncated files (datasets, checkpoints).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration or invalid user input; maps to exit code 2 in the CLI.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values encountered mid-computation. Silent NaN propagation is
// forbidden; every aborted step names the op it died in.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace maa
