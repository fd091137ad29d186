#pragma once

#include <stdexcept>
#include <string>

namespace aflora {

// Error taxonomy used across the library. All derive from std::runtime_error
// so callers that don't care about the category can catch one type.

// Operand shapes do not line up (matmul inner extents, elementwise mismatch).
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration value (bad rank, malformed file, unknown key).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Freeze schedule cannot fit the run (t_i/t_f/T violate 0 <= t_i < T - t_f).
// Separate from ConfigError so the CLI can map it to its own exit code.
struct ScheduleError : ConfigError {
    using ConfigError::ConfigError;
};

// An API precondition was violated (non-scalar loss, missing gradient, ...).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Out-of-range index (token id, class label).
struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace aflora
