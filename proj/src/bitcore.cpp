#include "pbatch/bitcore.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <stdexcept>
#include <string>
#include <type_traits>

#if defined(__AVX512F__) && defined(__AVX512VPOPCNTDQ__)
#include <immintrin.h>
#define PBATCH_AVX512_POPCNT 1
#endif

namespace pbatch {

namespace {

std::uint64_t tail_mask(std::size_t cols) {
  const std::size_t rem = cols % kWordBits;
  return rem == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << rem) - 1;
}

}  // namespace

BitMatrix::BitMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), words_per_row_(words_for(cols)), data_(rows * words_for(cols), 0) {}

BitMatrix::BitMatrix(std::size_t rows, std::size_t cols, std::vector<std::uint64_t> words)
    : rows_(rows), cols_(cols), words_per_row_(words_for(cols)), data_(std::move(words)) {
  if (data_.size() != rows_ * words_per_row_) {
    throw std::invalid_argument("BitMatrix: expected " + std::to_string(rows_ * words_per_row_) +
                                " words, got " + std::to_string(data_.size()));
  }
  if (words_per_row_ == 0) return;
  const std::uint64_t keep = tail_mask(cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    if (data_[r * words_per_row_ + words_per_row_ - 1] & ~keep) {
      throw std::invalid_argument("BitMatrix: padding bits set in row " + std::to_string(r));
    }
  }
}

void BitMatrix::set(std::size_t r, std::size_t c, bool value) {
  if (r >= rows_ || c >= cols_) {
    throw std::out_of_range("BitMatrix::set: (" + std::to_string(r) + ", " + std::to_string(c) +
                            ") outside " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }
  std::uint64_t& word = data_[r * words_per_row_ + c / kWordBits];
  const std::uint64_t bit = std::uint64_t{1} << (c % kWordBits);
  word = value ? (word | bit) : (word & ~bit);
}

BitMatrix pack_bit_matrix(const Matrix<std::uint8_t>& m) {
  BitMatrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto words = out.row_words(r);
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const std::uint8_t v = m(r, c);
      if (v > 1) {
        throw std::invalid_argument("pack_bit_matrix: element (" + std::to_string(r) + ", " +
                                    std::to_string(c) + ") = " + std::to_string(int{v}) +
                                    " is not 0 or 1");
      }
      words[c / kWordBits] |= std::uint64_t{v} << (c % kWordBits);
    }
  }
  return out;
}

Matrix<std::uint8_t> unpack_bit_matrix(const BitMatrix& m) {
  Matrix<std::uint8_t> out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m.get(r, c) ? 1 : 0;
  }
  return out;
}

std::vector<std::int64_t> plane_scales(int k) {
  if (k < 1 || k > 32) throw std::invalid_argument("plane_scales: k must be in [1, 32]");
  std::vector<std::int64_t> scales(static_cast<std::size_t>(k));
  scales[0] = -(std::int64_t{1} << (k - 1));
  for (int j = 1; j < k; ++j) scales[static_cast<std::size_t>(j)] = std::int64_t{1} << (k - 1 - j);
  return scales;
}

void transpose_64x64(std::span<std::uint64_t, 64> a) {
  std::uint64_t m = 0x00000000FFFFFFFFull;
  for (std::size_t j = 32; j != 0; j >>= 1, m ^= (m << j)) {
    for (std::size_t k = 0; k < 64; k = ((k | j) + 1) & ~j) {
      const std::uint64_t t = ((a[k] >> j) ^ a[k | j]) & m;
      a[k] ^= t << j;
      a[k | j] ^= t;
    }
  }
}

Bitplanes bitplane_transpose(const FixedPointVector& v, int k) {
  if (k < 1 || k > 32) throw std::invalid_argument("bitplane_transpose: k must be in [1, 32]");
  const std::size_t len = v.values.size();
  const std::int64_t hi = (std::int64_t{1} << (k - 1)) - 1;
  const std::int64_t lo = -(std::int64_t{1} << (k - 1));

  Bitplanes out{BitMatrix(static_cast<std::size_t>(k), len), plane_scales(k), 0};
  const std::size_t wpr = out.planes.words_per_row();
  std::vector<std::uint64_t> words(static_cast<std::size_t>(k) * wpr, 0);

  std::array<std::uint64_t, 64> block{};
  for (std::size_t w = 0; w < wpr; ++w) {
    const std::size_t begin = w * kWordBits;
    const std::size_t end = std::min(len, begin + kWordBits);
    block.fill(0);
    for (std::size_t i = begin; i < end; ++i) {
      std::int64_t x = v.values[i];
      if (x > hi || x < lo) {
        x = std::clamp(x, lo, hi);
        ++out.saturated;
      }
      block[i - begin] = static_cast<std::uint32_t>(static_cast<std::int32_t>(x));
    }
    transpose_64x64(block);
    for (int j = 0; j < k; ++j) {
      words[static_cast<std::size_t>(j) * wpr + w] = block[static_cast<std::size_t>(k - 1 - j)];
    }
  }
  out.planes = BitMatrix(static_cast<std::size_t>(k), len, std::move(words));
  return out;
}

void and_popcount_row(std::span<const std::uint64_t> w_row, const BitMatrix& planes,
                      std::span<std::int64_t> counts) {
  const std::size_t n = w_row.size();
  const std::size_t k = planes.rows();
#ifdef PBATCH_AVX512_POPCNT
  const std::size_t full = n / 8;
  const __mmask8 tail = static_cast<__mmask8>((1u << (n % 8)) - 1);
  for (std::size_t j = 0; j < k; ++j) {
    const std::uint64_t* p = planes.row_words(j).data();
    const std::uint64_t* w = w_row.data();
    __m512i acc0 = _mm512_setzero_si512();
    __m512i acc1 = _mm512_setzero_si512();
    std::size_t i = 0;
    for (; i + 1 < full; i += 2) {
      const __m512i a0 = _mm512_and_si512(_mm512_loadu_si512(w + 8 * i), _mm512_loadu_si512(p + 8 * i));
      const __m512i a1 =
          _mm512_and_si512(_mm512_loadu_si512(w + 8 * i + 8), _mm512_loadu_si512(p + 8 * i + 8));
      acc0 = _mm512_add_epi64(acc0, _mm512_popcnt_epi64(a0));
      acc1 = _mm512_add_epi64(acc1, _mm512_popcnt_epi64(a1));
    }
    if (i < full) {
      const __m512i a0 = _mm512_and_si512(_mm512_loadu_si512(w + 8 * i), _mm512_loadu_si512(p + 8 * i));
      acc0 = _mm512_add_epi64(acc0, _mm512_popcnt_epi64(a0));
    }
    if (tail) {
      const __m512i a = _mm512_and_si512(_mm512_maskz_loadu_epi64(tail, w + 8 * full),
                                         _mm512_maskz_loadu_epi64(tail, p + 8 * full));
      acc1 = _mm512_add_epi64(acc1, _mm512_popcnt_epi64(a));
    }
    counts[j] = _mm512_reduce_add_epi64(_mm512_add_epi64(acc0, acc1));
  }
#else
  for (std::size_t j = 0; j < k; ++j) {
    const auto p = planes.row_words(j);
    std::int64_t c0 = 0, c1 = 0;
    std::size_t i = 0;
    for (; i + 1 < n; i += 2) {
      c0 += std::popcount(w_row[i] & p[i]);
      c1 += std::popcount(w_row[i + 1] & p[i + 1]);
    }
    if (i < n) c0 += std::popcount(w_row[i] & p[i]);
    counts[j] = c0 + c1;
  }
#endif
}

InterleavedPlanes interleave_planes(const BitMatrix& planes) {
  if (planes.rows() > 32) throw std::invalid_argument("interleave_planes: at most 32 planes");
  InterleavedPlanes out;
  out.planes = planes.rows();
  out.padded = std::max<std::size_t>(8, (planes.rows() + 7) / 8 * 8);
  out.words = planes.words_per_row();
  out.cols = planes.cols();
  out.data.assign(out.words * out.padded, 0);
  for (std::size_t j = 0; j < out.planes; ++j) {
    const auto row = planes.row_words(j);
    for (std::size_t i = 0; i < out.words; ++i) out.data[i * out.padded + j] = row[i];
  }
  return out;
}

namespace {

void check_block(const BitMatrix& w, std::size_t row_begin, std::size_t row_end,
                 const InterleavedPlanes& planes, std::size_t out_size, std::size_t per_row,
                 const char* who) {
  if (w.cols() != planes.cols) {
    throw std::invalid_argument(std::string(who) + ": weight has " + std::to_string(w.cols()) +
                                " columns, planes have " + std::to_string(planes.cols));
  }
  if (row_begin > row_end || row_end > w.rows()) {
    throw std::out_of_range(std::string(who) + ": row range outside matrix");
  }
  if (out_size < (row_end - row_begin) * per_row) {
    throw std::invalid_argument(std::string(who) + ": output span too small");
  }
}

#ifdef PBATCH_AVX512_POPCNT

// Four weight rows share every plane load; the AND/popcount/add chain is the
// port-bound part, so the plane vectors must come from registers.
template <int NV, int RB>
inline void block_kernel(const std::uint64_t* const* rows, std::size_t words,
                         const std::uint64_t* pt, __m512i (&acc)[RB][NV]) {
  for (int r = 0; r < RB; ++r)
    for (int v = 0; v < NV; ++v) acc[r][v] = _mm512_setzero_si512();
  for (std::size_t i = 0; i < words; ++i) {
    __m512i x[RB];
    for (int r = 0; r < RB; ++r) x[r] = _mm512_set1_epi64(static_cast<long long>(rows[r][i]));
    const std::uint64_t* p = pt + i * NV * 8;
    for (int v = 0; v < NV; ++v) {
      const __m512i pv = _mm512_loadu_si512(p + v * 8);
      for (int r = 0; r < RB; ++r) {
        acc[r][v] = _mm512_add_epi64(acc[r][v], _mm512_popcnt_epi64(_mm512_and_si512(x[r], pv)));
      }
    }
  }
}

template <int NV, typename Sink>
void run_blocks(const BitMatrix& w, std::size_t row_begin, std::size_t row_end,
                const InterleavedPlanes& planes, Sink&& sink) {
  constexpr int kBlock = 4;
  const std::uint64_t* pt = planes.data.data();
  std::size_t r = row_begin;
  for (; r + kBlock <= row_end; r += kBlock) {
    const std::uint64_t* rows[kBlock];
    for (int q = 0; q < kBlock; ++q) rows[q] = w.row_words(r + static_cast<std::size_t>(q)).data();
    __m512i acc[kBlock][NV];
    block_kernel<NV, kBlock>(rows, planes.words, pt, acc);
    for (int q = 0; q < kBlock; ++q) sink(r + static_cast<std::size_t>(q) - row_begin, acc[q]);
  }
  for (; r < row_end; ++r) {
    const std::uint64_t* rows[1] = {w.row_words(r).data()};
    __m512i acc[1][NV];
    block_kernel<NV, 1>(rows, planes.words, pt, acc);
    sink(r - row_begin, acc[0]);
  }
}

template <typename Fn>
void dispatch_nv(std::size_t padded, Fn&& fn) {
  switch (padded / 8) {
    case 1: fn(std::integral_constant<int, 1>{}); break;
    case 2: fn(std::integral_constant<int, 2>{}); break;
    case 3: fn(std::integral_constant<int, 3>{}); break;
    case 4: fn(std::integral_constant<int, 4>{}); break;
    default: throw std::invalid_argument("and_popcount: unsupported plane count");
  }
}

#endif

}  // namespace

void and_popcount_block(const BitMatrix& w, std::size_t row_begin, std::size_t row_end,
                        const InterleavedPlanes& planes, std::span<std::int64_t> counts) {
  const std::size_t k = planes.planes;
  check_block(w, row_begin, row_end, planes, counts.size(), k, "and_popcount_block");
#ifdef PBATCH_AVX512_POPCNT
  dispatch_nv(planes.padded, [&](auto nv) {
    constexpr int NV = decltype(nv)::value;
    run_blocks<NV>(w, row_begin, row_end, planes, [&](std::size_t r, const __m512i(&acc)[NV]) {
      alignas(64) std::int64_t tmp[NV * 8];
      for (int v = 0; v < NV; ++v) _mm512_store_si512(tmp + v * 8, acc[v]);
      std::copy(tmp, tmp + k, counts.begin() + static_cast<std::ptrdiff_t>(r * k));
    });
  });
#else
  for (std::size_t r = row_begin; r < row_end; ++r) {
    auto out = counts.subspan((r - row_begin) * k, k);
    std::fill(out.begin(), out.end(), 0);
    const auto row = w.row_words(r);
    for (std::size_t i = 0; i < planes.words; ++i) {
      const std::uint64_t* p = planes.data.data() + i * planes.padded;
      for (std::size_t j = 0; j < k; ++j) out[j] += std::popcount(row[i] & p[j]);
    }
  }
#endif
}

void and_popcount_dot(const BitMatrix& w, std::size_t row_begin, std::size_t row_end,
                      const InterleavedPlanes& planes, std::span<const std::int64_t> scales,
                      std::span<std::int64_t> dots) {
  const std::size_t k = planes.planes;
  check_block(w, row_begin, row_end, planes, dots.size(), 1, "and_popcount_dot");
  if (scales.size() != k) throw std::invalid_argument("and_popcount_dot: one scale per plane");
#ifdef PBATCH_AVX512_POPCNT
  dispatch_nv(planes.padded, [&](auto nv) {
    constexpr int NV = decltype(nv)::value;
    alignas(64) std::int64_t padded_scales[NV * 8] = {};
    std::copy(scales.begin(), scales.end(), padded_scales);
    __m512i sv[NV];
    for (int v = 0; v < NV; ++v) sv[v] = _mm512_load_si512(padded_scales + v * 8);
    run_blocks<NV>(w, row_begin, row_end, planes, [&](std::size_t r, const __m512i(&acc)[NV]) {
      __m512i t = _mm512_mullo_epi64(acc[0], sv[0]);
      for (int v = 1; v < NV; ++v) t = _mm512_add_epi64(t, _mm512_mullo_epi64(acc[v], sv[v]));
      dots[r] = _mm512_reduce_add_epi64(t);
    });
  });
#else
  std::vector<std::int64_t> counts(k);
  for (std::size_t r = row_begin; r < row_end; ++r) {
    and_popcount_block(w, r, r + 1, planes, counts);
    std::int64_t acc = 0;
    for (std::size_t j = 0; j < k; ++j) acc += counts[j] * scales[j];
    dots[r - row_begin] = acc;
  }
#endif
}

IntMatrix binary_matvec_batch(const BitMatrix& w, const BitMatrix& planes) {
  if (w.cols() != planes.cols()) {
    throw std::invalid_argument("binary_matvec_batch: weight has " + std::to_string(w.cols()) +
                                " columns, planes have " + std::to_string(planes.cols()));
  }
  IntMatrix counts(w.rows(), planes.rows());
  if (planes.rows() == 0 || w.rows() == 0) return counts;
  if (planes.rows() > 32) {
    for (std::size_t r = 0; r < w.rows(); ++r) and_popcount_row(w.row_words(r), planes, counts.row(r));
    return counts;
  }
  and_popcount_block(w, 0, w.rows(), interleave_planes(planes), counts.values());
  return counts;
}

std::vector<std::int64_t> reduce_planes(const IntMatrix& counts,
                                        std::span<const std::int64_t> plane_scales) {
  if (counts.cols() != plane_scales.size()) {
    throw std::invalid_argument("reduce_planes: " + std::to_string(counts.cols()) +
                                " count columns vs " + std::to_string(plane_scales.size()) +
                                " plane scales");
  }
  std::vector<std::int64_t> out(counts.rows(), 0);
  for (std::size_t r = 0; r < counts.rows(); ++r) {
    std::int64_t acc = 0;
    for (std::size_t j = 0; j < plane_scales.size(); ++j) acc += counts(r, j) * plane_scales[j];
    out[r] = acc;
  }
  return out;
}

}  // namespace pbatch
