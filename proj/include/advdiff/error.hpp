#pragma once

#include <stdexcept>
#include <string>

namespace advdiff {

/// Base of every error this library raises on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition or configuration value was out of its contract.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

/// Loss or gradient became NaN/Inf during training or an attack.
class NonFiniteError : public Error {
public:
    NonFiniteError(const std::string& what, long index) : Error(what), index_(index) {}
    /// Offending batch/example index, or -1 when unknown.
    long index() const { return index_; }

private:
    long index_;
};

class IoError : public Error {
public:
    using Error::Error;
};

class CorruptFile : public IoError {
public:
    using IoError::IoError;
};

class VersionMismatch : public IoError {
public:
    using IoError::IoError;
};

}  // namespace advdiff
