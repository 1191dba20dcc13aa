// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace tfew {

/// Base class for all tfew errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Operand shapes are incompatible (mismatched matmul dims, bad broadcast, ...).
struct ShapeError : Error {
    using Error::Error;
};

/// A configuration field has an invalid value.
struct ConfigError : Error {
    using Error::Error;
};

/// Bad runtime input (out-of-range token id, ...).
struct InputError : Error {
    using Error::Error;
};

/// An API precondition was violated.
struct ContractError : Error {
    using Error::Error;
};

/// An object was used in an invalid state (e.g. backward called twice).
struct StateError : Error {
    using Error::Error;
};

/// A keyed lookup failed.
struct LookupError : Error {
    using Error::Error;
};

/// A prompt template could not be applied or produced untokenizable text.
struct TemplateError : Error {
    using Error::Error;
};

/// Training aborted (NaN loss or gradient).
struct TrainError : Error {
    using Error::Error;
};

/// Checkpoint file errors, one subtype per failure class.
struct CheckpointError : Error {
    using Error::Error;
};
struct CheckpointMagicError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct CheckpointVersionError : CheckpointError {
    using CheckpointError::CheckpointError;
};
/// Payload integrity failure: CRC mismatch or truncation.
struct CheckpointCrcError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct CheckpointIoError : CheckpointError {
    using CheckpointError::CheckpointError;
};

}  // namespace tfew
