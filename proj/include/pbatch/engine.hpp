#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pbatch/matrix.hpp"
#include "pbatch/quantizer.hpp"

namespace pbatch {

// Exact accumulator for sum_i scale_i * (W_i x_q) across weight bitlayers.
using Accumulator = __int128;

struct PBatchConfig {
  int weight_bits = 8;        // n, magnitude bitlayers (sign layer is extra)
  int activation_bits = 32;   // k
  int weight_frac_bits = kDefaultFracBits;
  int activation_frac_bits = kDefaultFracBits;
  // Pick the activation fixed point per call so max|x| fits in k bits, capped
  // at activation_frac_bits.
  bool auto_activation_frac = false;
  std::size_t threads = 1;
};

struct MatvecResult {
  RealVector values;
  std::size_t saturated = 0;     // activation elements clamped to the k-bit range
  int activation_frac_bits = 0;  // fixed point actually used for x
};

// Exact integer accumulators over the first use_layers bitlayers (sign layer
// first). Shared by the full and partial paths.
std::vector<Accumulator> pbatch_accumulate(const QuantizedLayer& layer, const Bitplanes& planes,
                                           std::size_t use_layers, std::size_t threads = 1);

// acc / 2^shift rounded once to float.
float rescale_accumulator(Accumulator acc, int shift);

MatvecResult pbatch_matvec(const QuantizedLayer& layer, std::span<const float> x,
                           const PBatchConfig& cfg);

// Accumulates the sign layer plus the top use_layers - 1 magnitude layers.
MatvecResult pbatch_matvec_partial(const QuantizedLayer& layer, std::span<const float> x,
                                   const PBatchConfig& cfg, std::size_t use_layers);

RealVector reference_float_matvec(const RealMatrix& w, std::span<const float> x);

}  // namespace pbatch
