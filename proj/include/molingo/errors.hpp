#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace molingo {

// Non-finite values or a diverged optimisation. The CLI maps this to exit 4.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite motion input, naming the first offending frame.
struct NonFiniteFrame : NumericalError {
  NonFiniteFrame(std::size_t frame_index, const std::string& where)
      : NumericalError(where + ": non-finite value at frame " + std::to_string(frame_index)), frame(frame_index) {}
  std::size_t frame;
};

// Incompatible shapes, widths or checkpoint settings.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace molingo
