#pragma once

#include <stdexcept>

namespace minigen {

// Violated call contract: bad shapes, out-of-range ids, invalid axis.
struct PreconditionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Structurally valid input the operation cannot meaningfully process:
// empty corpus, all-zero loss mask, summary that alone overflows the context.
struct DegenerateInputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite value caught by the debug check, or a diverged training loss.
struct NumericsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace minigen
