#pragma once

#include <stdexcept>
#include <string>

namespace mdmrl {

// Error taxonomy shared by the library and the CLI. The CLI maps these to
// stable exit codes: ConfigError -> 2, PreconditionError -> 3, IoError -> 4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct PreconditionError : std::runtime_error {
    explicit PreconditionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violation of an internal calling contract (e.g. replaying a step that was
// never recorded). Distinct from invalid user input.
struct ContractViolation : std::logic_error {
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

} // namespace mdmrl
