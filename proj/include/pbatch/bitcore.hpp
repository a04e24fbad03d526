#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pbatch/matrix.hpp"

namespace pbatch {

inline constexpr std::size_t kWordBits = 64;

inline constexpr std::size_t words_for(std::size_t cols) {
  return (cols + kWordBits - 1) / kWordBits;
}

// Binary matrix packed row-major into 64-bit words. Bit j of word w in a row
// holds column w*64 + j. Padding bits past `cols` are always zero.
class BitMatrix {
 public:
  BitMatrix() = default;
  BitMatrix(std::size_t rows, std::size_t cols);
  // Adopts packed words; throws if the length is wrong or padding bits are set.
  BitMatrix(std::size_t rows, std::size_t cols, std::vector<std::uint64_t> words);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t words_per_row() const { return words_per_row_; }
  std::size_t bytes() const { return data_.size() * sizeof(std::uint64_t); }

  bool get(std::size_t r, std::size_t c) const {
    return (data_[r * words_per_row_ + c / kWordBits] >> (c % kWordBits)) & 1u;
  }
  void set(std::size_t r, std::size_t c, bool value);

  std::span<const std::uint64_t> row_words(std::size_t r) const {
    return {data_.data() + r * words_per_row_, words_per_row_};
  }
  std::span<std::uint64_t> row_words(std::size_t r) {
    return {data_.data() + r * words_per_row_, words_per_row_};
  }
  std::span<const std::uint64_t> words() const { return data_; }

  bool operator==(const BitMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t words_per_row_ = 0;
  std::vector<std::uint64_t> data_;
};

// Integer vector with a fixed-point exponent: real value = value / 2^frac_bits.
struct FixedPointVector {
  std::vector<std::int32_t> values;
  int frac_bits = 0;
  // Elements clamped while converting into this vector.
  std::size_t saturated = 0;
};

// k activation bitplanes batched into one k x len binary matrix. Row 0 is the
// two's complement sign plane, row j >= 1 holds bit k-1-j.
struct Bitplanes {
  BitMatrix planes;
  std::vector<std::int64_t> scales;  // -2^(k-1), 2^(k-2), ..., 1
  std::size_t saturated = 0;
};

BitMatrix pack_bit_matrix(const Matrix<std::uint8_t>& m);
Matrix<std::uint8_t> unpack_bit_matrix(const BitMatrix& m);

std::vector<std::int64_t> plane_scales(int k);

// Bitwise transpose of k-bit two's complement values into bitplanes. Values
// outside [-2^(k-1), 2^(k-1)-1] are clamped and counted in `saturated`.
Bitplanes bitplane_transpose(const FixedPointVector& v, int k);

// In-place transpose of a 64x64 bit block: afterwards bit i of a[j] is the
// former bit j of a[i].
void transpose_64x64(std::span<std::uint64_t, 64> a);

// popcount(w_row AND planes.row(j)) for every plane j into counts[j].
void and_popcount_row(std::span<const std::uint64_t> w_row, const BitMatrix& planes,
                      std::span<std::int64_t> counts);

// Bitplanes re-laid word-major for the blocked kernel: word i of plane j sits
// at data[i * padded + j], with the plane count padded to a multiple of 8 by
// all-zero planes.
struct InterleavedPlanes {
  std::size_t planes = 0;
  std::size_t padded = 0;
  std::size_t words = 0;
  std::size_t cols = 0;
  std::vector<std::uint64_t> data;
};

InterleavedPlanes interleave_planes(const BitMatrix& planes);

// Rows [row_begin, row_end) of w against every plane. Writes
// counts[(r - row_begin) * planes + j].
void and_popcount_block(const BitMatrix& w, std::size_t row_begin, std::size_t row_end,
                        const InterleavedPlanes& planes, std::span<std::int64_t> counts);

// Same traversal with the plane reduction folded in:
// dots[r - row_begin] = sum_j popcount(w.row(r) AND plane_j) * scales[j].
void and_popcount_dot(const BitMatrix& w, std::size_t row_begin, std::size_t row_end,
                      const InterleavedPlanes& planes, std::span<const std::int64_t> scales,
                      std::span<std::int64_t> dots);

// counts(r, j) = popcount(w.row(r) AND planes.row(j)).
IntMatrix binary_matvec_batch(const BitMatrix& w, const BitMatrix& planes);

// out[r] = sum_j counts(r, j) * plane_scales[j].
std::vector<std::int64_t> reduce_planes(const IntMatrix& counts,
                                        std::span<const std::int64_t> plane_scales);

}  // namespace pbatch
