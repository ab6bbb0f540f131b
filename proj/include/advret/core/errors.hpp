#pragma once

#include <stdexcept>
#include <string>

namespace advret {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid specs, presets, CLI arguments, malformed config files.
struct ConfigError : Error {
    using Error::Error;
};

// Tensor rank/dimension mismatches and undersized inputs.
struct ShapeError : Error {
    using Error::Error;
};

// Inputs outside a function's mathematical domain (zero vectors under
// cosine distance, negative activations under fractional GeM exponents).
struct DomainError : Error {
    using Error::Error;
};

// File system and parse failures.
struct IoError : Error {
    using Error::Error;
};

// Checkpoint version/schema incompatibilities and corrupt archives.
struct CheckpointError : IoError {
    using IoError::IoError;
};

// Optimization failures: non-finite losses, accuracy floor not reached.
struct TrainingError : Error {
    using Error::Error;
};

// Mixing features or indexes produced by different frozen targets.
struct ContaminationError : Error {
    using Error::Error;
};

}  // namespace advret
