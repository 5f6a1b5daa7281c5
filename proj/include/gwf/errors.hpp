#pragma once

#include <stdexcept>
#include <string>

namespace gwf {

// Shape/precondition violations (programming or config errors).
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent on-disk data.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf or divergence detected at runtime.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace gwf
