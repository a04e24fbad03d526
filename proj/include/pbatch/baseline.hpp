#pragma once

#include <cstddef>
#include <span>

#include "pbatch/matrix.hpp"
#include "pbatch/quantizer.hpp"

namespace pbatch {

// Uniform integer quantization of both operands to the same width, the usual
// int8-style inference path. Supported widths are 1, 4, 8 and 16.
struct IntQuantConfig {
  int bits = 8;
  ClipSearchConfig clip{};
};

// Per-tensor symmetric integer tensor: real value = value * scale.
struct IntTensor {
  std::vector<std::int32_t> values;
  double scale = 0.0;
  bool degenerate = false;
};

// Weights go through the clip search before scaling; bits == 1 uses the
// {-v, +v} sign code.
IntTensor quantize_int_weights(const RealMatrix& w, const IntQuantConfig& cfg);
IntTensor quantize_int_activation(std::span<const float> x, int bits);

struct BaselineResult {
  RealVector values;
  bool degenerate = false;  // an all-zero operand produced a zero output
};

BaselineResult int_quantized_matvec(const RealMatrix& w, std::span<const float> x,
                                    const IntQuantConfig& cfg);

// Same, with the weight tensor quantized ahead of time.
BaselineResult int_quantized_matvec(const IntTensor& wq, std::size_t rows, std::size_t cols,
                                    std::span<const float> x, int bits);

// Round to the nearest IEEE binary16 value (ties to even), returned as float.
// Values beyond the binary16 range become +-infinity.
float round_to_half(float v);

struct Float16Result {
  RealVector values;
  bool overflow = false;
};

Float16Result float16_matvec(const RealMatrix& w, std::span<const float> x);

}  // namespace pbatch
