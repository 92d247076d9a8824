#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace osr {

/// Base class for all toolkit errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration: bad layer ordering, impossible split, unknown keys, ...
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File I/O and parse failures (IDX, CSV, model files).
class DataError : public Error {
public:
    using Error::Error;
};

} // namespace osr
