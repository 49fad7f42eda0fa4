#pragma once

#include <stdexcept>

namespace scan {

// Bad flags, unresolvable taps, geometry mismatches. CLI maps these to exit 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Diverged or otherwise failed training/evaluation. CLI maps these to exit 3.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace scan
