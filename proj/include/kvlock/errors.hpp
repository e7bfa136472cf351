#pragma once

#include <stdexcept>
#include <string>

namespace kvlock {

// Exit-code contract: 0 success, 2 usage/config, 3 data integrity, 4 numeric failure.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
    virtual int exit_code() const { return 1; }
};

// Bad usage, bad configuration, shape/divisibility violations, missing input files.
struct ConfigError : Error {
    using Error::Error;
    int exit_code() const override { return 2; }
};

// Corrupt or incompatible data: truncated files, hash mismatches, missing bank entries.
struct IntegrityError : Error {
    using Error::Error;
    int exit_code() const override { return 3; }
};

// NaN/Inf in computed tensors.
struct NumericError : Error {
    using Error::Error;
    int exit_code() const override { return 4; }
};

} // namespace kvlock
