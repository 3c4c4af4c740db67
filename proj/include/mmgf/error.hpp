#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>

namespace mmgf {

// Error taxonomy. Validation-type errors (shape, parameter, contract, data,
// config, io) map to CLI exit code 1; DivergenceError maps to exit code 2.

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes incompatible with an operation.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// An argument value outside its allowed range.
struct ParamError : Error {
    explicit ParamError(const std::string& msg) : Error(msg) {}
};

// A precondition on program state was violated (e.g. missing self-loops,
// empty mask, non-scalar loss).
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Malformed or inconsistent data (bad labels, non-finite inputs, file
// contents that do not match their header).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Config file problems; messages name the offending key and line.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Filesystem-level failures.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Training produced a non-finite loss; carries the epoch and the first
// offending loss component.
struct DivergenceError : Error {
    int epoch;
    std::string component;
    DivergenceError(int epoch_, std::string component_)
        : Error("training diverged at epoch " + std::to_string(epoch_) +
                ": component '" + component_ + "' is non-finite"),
          epoch(epoch_),
          component(std::move(component_)) {}
};

// Warning sink. Defaults to stderr; tests may swap it to count or capture.
inline std::function<void(const std::string&)>& warn_handler() {
    static std::function<void(const std::string&)> handler =
        [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; };
    return handler;
}

inline void warn(const std::string& msg) { warn_handler()(msg); }

}  // namespace mmgf
