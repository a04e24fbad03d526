#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "pbatch/bitcore.hpp"
#include "pbatch/matrix.hpp"

namespace pbatch {

inline constexpr int kDefaultFracBits = 16;

// Clip thresholds searched are (i / num_candidates) * max|W| for
// i = 1..num_candidates, so 1.0 (no clipping) is always a candidate.
struct ClipSearchConfig {
  std::size_t num_candidates = 64;
};

struct RoundedMatrix {
  RealMatrix values;
  double step = 0.0;        // d, or the 1-bit magnitude v
  bool degenerate = false;  // constant (or all-zero) input returned unchanged
};

// Weight quantized onto the grid its bitlayers can represent exactly:
// values are multiples of 2^shift in [-2^(shift+n), 2^(shift+n) - 2^shift].
struct FixedPointWeights {
  IntMatrix values;
  int n_bits = 0;
  int shift = 0;
  int frac_bits = kDefaultFracBits;
  double clip = std::numeric_limits<double>::infinity();
  double step = 0.0;  // d of the clipped matrix (n >= 2) or (max - min) / 2 for n == 1
  bool degenerate = false;
};

// Ordered bitlayers and their scales for one weight matrix. Layer 0 is the
// two's complement sign layer with scales[0] == -2 * scales[1]; the rest are
// descending consecutive powers of two. sum_i scales[i] * bitlayers[i] == W_q.
struct QuantizedLayer {
  std::vector<BitMatrix> bitlayers;
  std::vector<std::int64_t> scales;
  int frac_bits = kDefaultFracBits;
  std::size_t rows = 0;
  std::size_t cols = 0;
  int n_bits = 0;
  bool degenerate = false;

  std::size_t packed_bytes() const;
  void validate() const;
};

double mean_abs_error(const RealMatrix& a, const RealMatrix& b);

// d * round(clamp(w, -clip, clip) / d), d = (max - min) / 2^n over the clamped
// matrix. Rounds half away from zero. Requires n >= 2, clip > 0.
RoundedMatrix quantize_round(const RealMatrix& w, int n,
                             double clip = std::numeric_limits<double>::infinity());

// v * sign(w) with sign(0) = +1 and v = median(|w|), the minimizer of the mean
// absolute error over all two-level codes {-v, +v}.
RoundedMatrix quantize_1bit(const RealMatrix& w);

double optimize_clip(const RealMatrix& w, int n, const ClipSearchConfig& cfg = {});

FixedPointWeights quantize_weights_fixed(const RealMatrix& w, int n,
                                         int frac_bits = kDefaultFracBits,
                                         const ClipSearchConfig& cfg = {});

QuantizedLayer decompose_fixed(const FixedPointWeights& wq);

QuantizedLayer decompose_bitlayers(const RealMatrix& w, int n, int frac_bits = kDefaultFracBits,
                                   const ClipSearchConfig& cfg = {});

// clamp(floor(x * 2^frac_bits)) into the k-bit two's complement range.
FixedPointVector quantize_activation(std::span<const float> x, int k,
                                     int frac_bits = kDefaultFracBits);

// Largest frac_bits <= max_frac_bits such that max|x| * 2^frac_bits still fits
// in k-bit two's complement (never below zero).
int fit_activation_frac_bits(std::span<const float> x, int k, int max_frac_bits);

IntMatrix reconstruct_integers(const QuantizedLayer& layer);
RealMatrix reconstruct(const QuantizedLayer& layer);

}  // namespace pbatch
