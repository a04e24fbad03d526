#pragma once

// Independent reference implementations used as test oracles. They are
// deliberately naive: per-bit loops, dense integer products, scalar cells.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "pbatch/bitcore.hpp"
#include "pbatch/matrix.hpp"
#include "pbatch/nn.hpp"

namespace oracle {

using pbatch::IntMatrix;
using pbatch::RealMatrix;
using pbatch::RealVector;

inline RealMatrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, float lo = -1.0f,
                                float hi = 1.0f) {
  std::uniform_real_distribution<float> d(lo, hi);
  RealMatrix m(rows, cols);
  for (auto& v : m.values()) v = d(rng);
  return m;
}

inline RealVector random_vector(std::size_t n, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> d(lo, hi);
  RealVector v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline pbatch::Matrix<std::uint8_t> random_bits(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  pbatch::Matrix<std::uint8_t> m(rows, cols);
  for (auto& v : m.values()) v = static_cast<std::uint8_t>(rng() & 1u);
  return m;
}

// Reads bits straight out of the packed word array.
inline pbatch::Matrix<std::uint8_t> unpack(const pbatch::BitMatrix& b) {
  pbatch::Matrix<std::uint8_t> m(b.rows(), b.cols());
  const auto words = b.words();
  const std::size_t wpr = (b.cols() + 63) / 64;
  for (std::size_t r = 0; r < b.rows(); ++r) {
    for (std::size_t c = 0; c < b.cols(); ++c) {
      m(r, c) = static_cast<std::uint8_t>((words[r * wpr + c / 64] >> (c % 64)) & 1u);
    }
  }
  return m;
}

inline bool padding_zero(const pbatch::BitMatrix& b) {
  const auto words = b.words();
  const std::size_t wpr = (b.cols() + 63) / 64;
  for (std::size_t r = 0; r < b.rows(); ++r) {
    for (std::size_t c = b.cols(); c < wpr * 64; ++c) {
      if ((words[r * wpr + c / 64] >> (c % 64)) & 1u) return false;
    }
  }
  return true;
}

// counts(r, j) = sum_c a(r, c) * b(j, c)
inline IntMatrix dense_binary_matmul(const pbatch::Matrix<std::uint8_t>& a, const pbatch::Matrix<std::uint8_t>& b) {
  IntMatrix out(a.rows(), b.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      std::int64_t s = 0;
      for (std::size_t c = 0; c < a.cols(); ++c) s += a(r, c) * b(j, c);
      out(r, j) = s;
    }
  }
  return out;
}

// floor(x * 2^f) saturated to k-bit two's complement.
inline std::vector<std::int64_t> fixed_point(const RealVector& x, int k, int f) {
  const long double lo = -std::ldexp(1.0L, k - 1);
  const long double hi = std::ldexp(1.0L, k - 1) - 1;
  std::vector<std::int64_t> out;
  for (float v : x) {
    long double t = std::floor(static_cast<long double>(v) * std::ldexp(1.0L, f));
    t = std::clamp(t, lo, hi);
    out.push_back(static_cast<std::int64_t>(t));
  }
  return out;
}

// Largest f <= cap with floor(+-max|x| * 2^f) inside k-bit two's complement.
inline int activation_frac(const RealVector& x, int k, int cap) {
  long double m = 0;
  for (float v : x) m = std::max(m, std::abs(static_cast<long double>(v)));
  for (int f = cap; f > 0; --f) {
    if (m * std::ldexp(1.0L, f) < std::ldexp(1.0L, k - 1)) return f;
  }
  return 0;
}

inline std::vector<__int128> dense_int_matvec(const IntMatrix& w, const std::vector<std::int64_t>& x) {
  std::vector<__int128> out(w.rows(), 0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) out[r] += static_cast<__int128>(w(r, c)) * x[c];
  }
  return out;
}

inline float rescale(__int128 acc, int shift) {
  return static_cast<float>(std::ldexp(static_cast<double>(acc), -shift));
}

// Row-sequential double accumulation, rounded once to float.
inline RealVector float_matvec(const RealMatrix& w, const RealVector& x) {
  RealVector out(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < w.cols(); ++c) s += static_cast<double>(w(r, c)) * static_cast<double>(x[c]);
    out[r] = static_cast<float>(s);
  }
  return out;
}

inline float sigmoid(float v) { return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v)))); }

inline RealVector rnn_step(const pbatch::LayerSpec& l, const RealVector& x, const RealVector& h) {
  const RealVector a = float_matvec(l.weight, x);
  const RealVector b = float_matvec(l.recurrent, h);
  RealVector out(l.out_dim);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float pre = a[i] + b[i] + l.bias[i];
    out[i] = pbatch::apply_activation(l.activation, pre);
  }
  return out;
}

inline void lstm_step(const pbatch::LayerSpec& l, const RealVector& x, RealVector& h, RealVector& c) {
  const std::size_t n = l.out_dim;
  const RealVector a = float_matvec(l.weight, x);
  const RealVector b = float_matvec(l.recurrent, h);
  RealVector g(4 * n);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = a[i] + b[i] + l.bias[i];
  for (std::size_t j = 0; j < n; ++j) {
    const float ig = sigmoid(g[j]);
    const float fg = sigmoid(g[n + j]);
    const float cg = std::tanh(g[2 * n + j]);
    const float og = sigmoid(g[3 * n + j]);
    c[j] = fg * c[j] + ig * cg;
    h[j] = og * std::tanh(c[j]);
  }
}

// Decodes a binary16 bit pattern.
inline double half_value(std::uint16_t bits) {
  const int sign = bits >> 15;
  const int exp = (bits >> 10) & 0x1f;
  const int man = bits & 0x3ff;
  double v;
  if (exp == 0) {
    v = std::ldexp(static_cast<double>(man), -24);
  } else if (exp == 31) {
    v = man ? std::numeric_limits<double>::quiet_NaN() : std::numeric_limits<double>::infinity();
  } else {
    v = std::ldexp(static_cast<double>(man | 0x400), exp - 25);
  }
  return sign ? -v : v;
}

// Nearest binary16 value by exhaustive search over finite patterns, ties to
// the even mantissa; beyond the overflow threshold returns infinity.
inline double nearest_half(double v) {
  if (std::abs(v) >= 65520.0) return v > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  double best = 0.0;
  double best_err = std::numeric_limits<double>::infinity();
  int best_bits = 0;
  for (int b = 0; b < 0x10000; ++b) {
    const int exp = (b >> 10) & 0x1f;
    if (exp == 31) continue;
    const double h = half_value(static_cast<std::uint16_t>(b));
    const double err = std::abs(h - v);
    if (err < best_err || (err == best_err && (b & 1) == 0 && (best_bits & 1) == 1)) {
      best = h;
      best_err = err;
      best_bits = b;
    }
  }
  return best;
}

// dominated[i] is true when some other point has quality >= and cost <= with
// at least one strict.
template <typename P>
std::vector<bool> dominance(const std::vector<P>& pts) {
  std::vector<bool> out(pts.size(), false);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i == j) continue;
      const bool ge = pts[j].quality >= pts[i].quality && pts[j].cost <= pts[i].cost;
      const bool strict = pts[j].quality > pts[i].quality || pts[j].cost < pts[i].cost;
      if (ge && strict) {
        out[i] = true;
        break;
      }
    }
  }
  return out;
}

}  // namespace oracle
