#pragma once

#include <stdexcept>
#include <string>

namespace softmorph {

// Error taxonomy. The CLI maps these onto distinct exit codes; library users
// can catch the base classes.

/// Input violates an operation's preconditions (shape mismatch, non-finite
/// values, bad ranges).
class InvalidInputError : public std::invalid_argument {
public:
    explicit InvalidInputError(const std::string& what) : std::invalid_argument(what) {}
};

/// A lesion spec that cannot be rasterized inside the requested image.
class InvalidSpecError : public InvalidInputError {
public:
    explicit InvalidSpecError(const std::string& what) : InvalidInputError(what) {}
};

/// File could not be read, written, or parsed. Message carries the path.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// EMA normalizer applied before its first update.
class UninitializedNormalizerError : public std::logic_error {
public:
    explicit UninitializedNormalizerError(const std::string& what) : std::logic_error(what) {}
};

/// Gradient requested for a scalar that is not one of the supported
/// compositions.
class UnsupportedGraphError : public std::logic_error {
public:
    explicit UnsupportedGraphError(const std::string& what) : std::logic_error(what) {}
};

/// Statistic undefined for the given data (e.g. single-class AUC).
class UndefinedMetricError : public std::runtime_error {
public:
    explicit UndefinedMetricError(const std::string& what) : std::runtime_error(what) {}
};

/// Too few usable observations for a test (e.g. <5 non-zero differences).
class InsufficientDataError : public std::runtime_error {
public:
    explicit InsufficientDataError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace softmorph
