#pragma once

#include <stdexcept>
#include <string>

namespace qvnn {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor or layer shape mismatch.
struct ShapeError : Error {
    using Error::Error;
};

// Misuse of the forward/backward tape protocol.
struct StateError : Error {
    using Error::Error;
};

// Invalid configuration or violated call contract.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed dataset or model file.
struct FormatError : Error {
    using Error::Error;
};

// Bad labels or out-of-range indices.
struct DataError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace qvnn
