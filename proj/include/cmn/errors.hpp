#pragma once

#include <stdexcept>
#include <string>

namespace cmn {

// Error taxonomy. The CLI maps these onto process exit codes.

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or feature shapes do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A token, row or memory index is out of range.
class IndexError : public Error {
public:
    using Error::Error;
};

/// An argument violates an operation precondition.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents (bad magic, truncated payload, bad JSON schema).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Internal state does not agree with the data it is applied to (stale trace).
class ConsistencyError : public Error {
public:
    using Error::Error;
};

/// Optimisation failed, e.g. a non-finite gradient.
class TrainingError : public Error {
public:
    using Error::Error;
};

/// File could not be opened, read or written.
class FileError : public Error {
public:
    using Error::Error;
};

/// Invalid run configuration (unknown key, bad value, missing required key).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Checkpoint or artifact disagrees with the requested configuration.
class StateMismatchError : public Error {
public:
    using Error::Error;
};

}  // namespace cmn
