#pragma once

#include <stdexcept>
#include <string>

namespace sparsecnn {

// Root of every error this library throws. The CLI maps the three middle
// classes onto exit codes (config=2, io=3, numeric=4).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// File-format problems are IO-class errors.
class FormatError : public IoError {
public:
    using IoError::IoError;
};

class BadMagicError : public FormatError {
public:
    using FormatError::FormatError;
};

class TruncatedError : public FormatError {
public:
    using FormatError::FormatError;
};

class CountMismatchError : public FormatError {
public:
    using FormatError::FormatError;
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

class NnzMismatchError : public FormatError {
public:
    using FormatError::FormatError;
};

}  // namespace sparsecnn
