#pragma once

#include <stdexcept>
#include <string>

namespace flowsr {

// Bad hyperparameter / arch / config-file value.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape or size mismatch.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse (non-scalar loss, empty batch, update on frozen model, ...).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical failure: solver step floor, oracle cross-check disagreement,
// unreliable estimate, quadrature non-convergence.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed container file (bad magic, version, truncation).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training aborted (non-finite loss or gradient).
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace flowsr
