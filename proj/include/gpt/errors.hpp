#pragma once

#include <stdexcept>

namespace gpt {

// Error taxonomy mirrored by the CLI exit codes: parse -> 2,
// insufficient data -> 3, non-convergence of every leaf -> 4.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InsufficientDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateSampleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SchemaMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace gpt
