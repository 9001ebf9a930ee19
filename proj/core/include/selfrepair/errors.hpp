#pragma once

#include <stdexcept>
#include <string>

namespace selfrepair {

// Error taxonomy mirrored by the CLI exit codes: ConfigError -> 2, DataError -> 3.
// ContractError marks a violated call precondition and should not surface from a
// well-formed run.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class ContractError : public Error {
public:
    using Error::Error;
};

} // namespace selfrepair
