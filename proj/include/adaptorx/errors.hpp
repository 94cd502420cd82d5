#pragma once

#include <stdexcept>

namespace adaptorx {

// Error taxonomy. Everything derives from std::runtime_error so callers can
// catch broadly; the distinct types exist where tests and callers need to
// tell failure classes apart.

// Dimension, rank, length, or index violations in tensor ops and batches.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Unknown primitive id passed to the op dispatcher.
struct UnsupportedOpError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Optimizer asked to step a parameter whose gradient was never populated.
struct GradientError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Domain errors on values: undefined means, non-bijective ciphers,
// unknown label strings, malformed metric inputs.
struct ValueError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid or unknown configuration keys/fields.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Head routing and objective registration failures.
struct RoutingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Empty datasets, misaligned corpora, empty evaluation splits.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint archive does not reconstruct (manifest/blob mismatch).
struct CorruptionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training loop aborts (non-finite loss, routing failure mid-run).
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace adaptorx
