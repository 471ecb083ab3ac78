#pragma once

#include <stdexcept>
#include <string>

namespace fusionbench {

// Shape or dimension disagreement between arrays and parameter specs.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed config, manifest, or checkpoint content. CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A training step was requested before the step it depends on ran. CLI exit code 3.
struct PrerequisiteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite loss during training. CLI exit code 4.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace fusionbench
