#pragma once

#include <stdexcept>
#include <string>

namespace cxrcf {

/// Base class for every error raised by the toolkit. The CLI maps these to
/// exit code 1; UsageError maps to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

/// Input file does not match the expected column layout.
class SchemaError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ConflictError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

class IntegrityError : public Error {
public:
    using Error::Error;
};

/// Checkpoints cannot be combined into one editing pipeline.
class CompositionError : public Error {
public:
    using Error::Error;
};

/// A checkpoint source could not be located.
class ResolutionError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

} // namespace cxrcf
