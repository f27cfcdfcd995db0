#pragma once

#include <stdexcept>
#include <string>

namespace dslfm {

// Every failure the library raises derives from Error so callers can catch
// one type; the subclasses let the CLI map failures onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad or non-finite caller input.
class InputError : public Error {
public:
    using Error::Error;
};

class SchemaError : public InputError {
public:
    using InputError::InputError;
};

class DuplicateKeyError : public InputError {
public:
    using InputError::InputError;
};

class EmptyPanelError : public InputError {
public:
    using InputError::InputError;
};

// A design or factor matrix lacks the rank an estimator needs.
class RankError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

// The statistic is undefined for the supplied data (zero variance and similar).
class DegenerateError : public Error {
public:
    using Error::Error;
};

class CalibrationError : public Error {
public:
    using Error::Error;
};

class EstimationError : public Error {
public:
    using Error::Error;
};

// Malformed configuration; maps to exit code 2 in the CLI.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace dslfm
