#pragma once

#include <stdexcept>
#include <string>

namespace flowsync {

// Invalid configuration or invalid CLI usage. Maps to exit code 1.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse (stepping a finished episode, shape mismatch, empty input).
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Pressure solve failed to converge within the iteration cap.
struct SolverError : std::runtime_error {
    SolverError(const std::string& msg, double final_residual)
        : std::runtime_error(msg), residual(final_residual) {}
    double residual;
};

// Non-finite values encountered in network parameters or outputs.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failures, annotated with the offending path.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace flowsync
