#pragma once

#include <stdexcept>
#include <string>

namespace deepkexp {

// Caller passed shapes or names that cannot be processed.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DimensionMismatch : UsageError {
    using UsageError::UsageError;
};

struct ShapeMismatch : UsageError {
    using UsageError::UsageError;
};

struct UnknownName : UsageError {
    using UsageError::UsageError;
};

// Input data is unusable (parse failures, empty or undersized datasets).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : DataError {
    using DataError::DataError;
};

struct NonNumeric : ParseError {
    using ParseError::ParseError;
};

struct EmptyFile : DataError {
    using DataError::DataError;
};

struct TooFewRows : DataError {
    using DataError::DataError;
};

struct WrongDimension : DataError {
    using DataError::DataError;
};

struct EmptyBatch : DataError {
    using DataError::DataError;
};

struct DatasetTooSmall : DataError {
    using DataError::DataError;
};

struct EmptyCluster : DataError {
    using DataError::DataError;
};

// Numerical failure states.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NotSymmetric : NumericalError {
    using NumericalError::NumericalError;
};

struct SingularAfterJitter : NumericalError {
    using NumericalError::NumericalError;
};

struct DivergedLoss : NumericalError {
    using NumericalError::NumericalError;
};

struct NotNormalizable : NumericalError {
    using NumericalError::NumericalError;
};

struct ScoreUnavailable : UsageError {
    using UsageError::UsageError;
};

}  // namespace deepkexp
