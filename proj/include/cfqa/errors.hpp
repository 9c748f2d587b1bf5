#pragma once

#include <stdexcept>
#include <string>

namespace cfqa {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Bad configuration, usage, or template: CLI exit code 1.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent data (files, records, invariants): CLI exit code 2.
class DataError : public Error {
public:
    using Error::Error;
};

/// Backend transport exhausted after retries: CLI exit code 3.
class TransportError : public Error {
public:
    using Error::Error;
};

/// Permanent backend failure for a single request (refusal, rejected input).
/// Recorded per candidate; never aborts a run.
class ContentError : public Error {
public:
    using Error::Error;
};

/// Backend does not support the requested operation.
class CapabilityError : public Error {
public:
    using Error::Error;
};

/// Transient backend failure; the gateway retries these.
class TransientBackendError : public Error {
public:
    using Error::Error;
};

}  // namespace cfqa
