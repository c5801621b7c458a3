#pragma once

#include <stdexcept>
#include <string>

namespace lcl {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ParameterError : public Error {
public:
    using Error::Error;
};

/// A documented pre/post condition of a module was broken at run time
/// (e.g. an optimizer update of a frozen tensor, growth on a fixed site).
class ContractViolation : public Error {
public:
    using Error::Error;
};

class EvaluationError : public Error {
public:
    using Error::Error;
};

class InsufficientStatistics : public Error {
public:
    using Error::Error;
};

class EmptyInputError : public Error {
public:
    using Error::Error;
};

class RegistryError : public Error {
public:
    using Error::Error;
};

class UndefinedMetric : public Error {
public:
    using Error::Error;
};

/// Raised by file loaders. `kind` distinguishes the failure class so callers
/// and tests can react to a specific defect.
class ValidationError : public Error {
public:
    enum class Kind {
        Parse,
        MissingField,
        DimensionMismatch,
        DuplicateName,
        NonFinite,
        Empty,
        InvalidValue,
    };

    ValidationError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class CheckpointError : public Error {
public:
    enum class Kind { Io, BadMagic, VersionMismatch, Corrupt };

    CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace lcl
