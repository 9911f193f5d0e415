#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace adasgn {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid hyperparameter or architecture setting (even kernel, tau <= 0, ...).
struct ConfigError : Error {
    using Error::Error;
};

struct IndexError : Error {
    using Error::Error;
};

// A caller broke an operation's precondition (non-scalar loss, length mismatch, ...).
struct ContractError : Error {
    using Error::Error;
};

struct BatchSizeError : Error {
    using Error::Error;
};

struct PartitionError : Error {
    using Error::Error;
};

struct CompatibilityError : Error {
    using Error::Error;
};

struct ParseError : Error {
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace adasgn
