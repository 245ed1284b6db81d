#pragma once

#include <stdexcept>
#include <string>

namespace bpa {

/// Raised when caller-supplied values violate a documented precondition
/// (bad counts, mismatched dimensions, non-positive scales, ...).
class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Dimension or landmark-count mismatch between inputs.
class DimensionError : public ValidationError {
public:
    explicit DimensionError(const std::string& what) : ValidationError(what) {}
};

/// Raised when the inputs are well formed but the computation has no
/// meaningful answer: coincident landmarks, zero residuals, singular covariances.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

class DegenerateShapeError : public NumericalError {
public:
    explicit DegenerateShapeError(const std::string& what) : NumericalError(what) {}
};

}  // namespace bpa
