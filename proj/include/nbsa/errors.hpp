#pragma once

#include <stdexcept>
#include <string>

namespace nbsa {

/// Operand shapes do not conform. The message names the operation and shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A precondition on a scalar argument was violated (rate, count, label...).
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed, truncated, or otherwise unreadable file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ChecksumError : public FormatError {
public:
    using FormatError::FormatError;
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Training diverged (non-finite loss).
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(long rows, long cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace nbsa
