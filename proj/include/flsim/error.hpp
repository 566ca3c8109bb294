#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flsim {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration: dimension mismatches, infeasible N/M combinations.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Invalid call-site input such as an out-of-range label or a length mismatch.
class InputError : public Error {
public:
    using Error::Error;
};

/// Malformed input file. `offset` is the byte position where decoding failed.
class IngestError : public Error {
public:
    IngestError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class AggregationError : public Error {
public:
    using Error::Error;
};

/// Input that is well-formed but leaves the operation undefined (zero norm, no negatives, ...).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

}  // namespace flsim
