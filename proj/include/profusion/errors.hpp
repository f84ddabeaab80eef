#pragma once

#include <stdexcept>
#include <string>

namespace profusion {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor shapes disagree (matmul inner dims, elementwise mismatch, ...).
struct DimensionError : Error {
    using Error::Error;
};

// Caller passed a value outside the documented domain (bad sigma, bad step
// index, class index out of range, ...).
struct InputError : Error {
    using Error::Error;
};

// A model specification is internally inconsistent at build time.
struct SpecError : Error {
    using Error::Error;
};

// An API contract was violated (backward on a non-scalar, step without
// gradients, ...). Indicates a programming error rather than bad data.
struct ContractError : Error {
    using Error::Error;
};

// Training diverged; message names the epoch and learning rate.
struct TrainingError : Error {
    using Error::Error;
};

// Problem with a config file or its contents.
struct ConfigError : Error {
    using Error::Error;
};

} // namespace profusion
