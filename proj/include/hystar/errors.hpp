#pragma once

#include <stdexcept>
#include <string>

namespace hystar {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Input outside an operation's mathematical domain (log of a non-positive value, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Non-finite intermediate, non-convergent iteration or degenerate input.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Caller violated a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

/// Malformed, truncated or tampered on-disk artifact.
class FormatError : public Error {
public:
    using Error::Error;
};

} // namespace hystar
