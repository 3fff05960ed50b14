#pragma once

#include <stdexcept>
#include <string>

namespace vqapipe {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad inputs: malformed distributions, empty prompts, join mismatches.
struct ValidationError : Error {
    using Error::Error;
};

// Misconfigured wiring: dimension mismatches, missing files, bad manifests.
struct ConfigurationError : Error {
    using Error::Error;
};

// A backend was asked for something its declared capability does not cover.
struct CapabilityError : Error {
    using Error::Error;
};

// Transport or model-side failure; carries endpoint and retry context in the message.
struct BackendError : Error {
    using Error::Error;
};

struct TimeoutError : BackendError {
    using BackendError::BackendError;
};

// Cache entry whose stored digest no longer matches its payload.
struct CacheCorruptionError : Error {
    using Error::Error;
};

}  // namespace vqapipe
