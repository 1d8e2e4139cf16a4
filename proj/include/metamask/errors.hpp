#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace metamask {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible extents, bad axis, non-scalar loss.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Input outside an operation's mathematical domain (log of a nonpositive
/// value, division by exact zero, zero-norm feature, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value or combination, optionally tied to a dotted
/// config field path.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what, std::string field = {})
        : Error(field.empty() ? what : field + ": " + what), field_(std::move(field))
    {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// A differentiation target is not connected to the loss being differentiated.
class LineageError : public Error {
public:
    using Error::Error;
};

/// Malformed tensor file or dataset manifest.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure.
class IoError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
public:
    DivergenceError(std::size_t step, const std::string& what)
        : Error("step " + std::to_string(step) + ": " + what), step_(step)
    {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

}  // namespace metamask
