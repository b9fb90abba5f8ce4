#pragma once

#include <stdexcept>
#include <string>

namespace sta {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand or tensor shapes are incompatible with the requested operation.
struct ShapeError : Error {
    using Error::Error;
};

// Input lies outside an operation's mathematical domain.
struct DomainError : Error {
    using Error::Error;
};

// A caller violated an API precondition.
struct ContractError : Error {
    using Error::Error;
};

// A configuration value is invalid or inconsistent.
struct ConfigError : Error {
    using Error::Error;
};

// A non-finite value appeared in a forward computation.
struct NumericError : Error {
    using Error::Error;
};

// Training or generation data is unusable (empty epochs, failed placement,
// exhausted augmentation sampling).
struct DataError : Error {
    using Error::Error;
};

// A serialized file is malformed.
struct FormatError : Error {
    using Error::Error;
};

// A file was written by an incompatible format version.
struct VersionError : FormatError {
    using FormatError::FormatError;
};

// A file failed its checksum.
struct IntegrityError : FormatError {
    using FormatError::FormatError;
};

// A metric is undefined for the given inputs.
struct MetricError : Error {
    using Error::Error;
};

}  // namespace sta
