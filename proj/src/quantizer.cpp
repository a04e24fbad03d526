#include "pbatch/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pbatch {

namespace {

void check_bits(int n, int lo, const char* who) {
  if (n < lo || n > 30) {
    throw std::invalid_argument(std::string(who) + ": bit count " + std::to_string(n) +
                                " outside [" + std::to_string(lo) + ", 30]");
  }
}

void check_frac(int f, const char* who) {
  if (f < 0 || f > 31) {
    throw std::invalid_argument(std::string(who) + ": frac_bits " + std::to_string(f) +
                                " outside [0, 31]");
  }
}

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

Range clamped_range(std::span<const float> w, double clip) {
  Range r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (float v : w) {
    const double c = std::clamp(static_cast<double>(v), -clip, clip);
    r.lo = std::min(r.lo, c);
    r.hi = std::max(r.hi, c);
  }
  return r;
}

double max_abs(std::span<const float> w) {
  double m = 0.0;
  for (float v : w) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

// Mean |quantize_round(w, n, clip) - w| without materializing the result.
double rounding_error(std::span<const float> w, int n, double clip) {
  const Range r = clamped_range(w, clip);
  const double d = (r.hi - r.lo) / std::ldexp(1.0, n);
  double err = 0.0;
  for (float v : w) {
    const double c = std::clamp(static_cast<double>(v), -clip, clip);
    // A collapsed range maps every entry to the single clamped value.
    const double q = d > 0.0 ? d * std::round(c / d) : c;
    err += std::abs(static_cast<double>(static_cast<float>(q)) - static_cast<double>(v));
  }
  return w.empty() ? 0.0 : err / static_cast<double>(w.size());
}

double median_abs(std::span<const float> w) {
  std::vector<double> a(w.size());
  std::transform(w.begin(), w.end(), a.begin(), [](float v) { return std::abs(double{v}); });
  const std::size_t mid = a.size() / 2;
  std::nth_element(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(mid), a.end());
  if (a.size() % 2 == 1) return a[mid];
  const double upper = a[mid];
  const double lower = *std::max_element(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace

std::size_t QuantizedLayer::packed_bytes() const {
  std::size_t total = 0;
  for (const auto& b : bitlayers) total += b.bytes();
  return total;
}

void QuantizedLayer::validate() const {
  const auto expected = static_cast<std::size_t>(n_bits) + 1;
  if (bitlayers.size() != expected || scales.size() != expected) {
    throw std::invalid_argument("QuantizedLayer: expected " + std::to_string(expected) +
                                " bitlayers and scales");
  }
  for (const auto& b : bitlayers) {
    if (b.rows() != rows || b.cols() != cols) {
      throw std::invalid_argument("QuantizedLayer: bitlayer shape mismatch");
    }
  }
  for (std::size_t i = 1; i < scales.size(); ++i) {
    const std::int64_t s = scales[i];
    if (s <= 0 || (s & (s - 1)) != 0) {
      throw std::invalid_argument("QuantizedLayer: scale " + std::to_string(s) +
                                  " is not a positive power of two");
    }
    if (i + 1 < scales.size() && scales[i + 1] * 2 != s) {
      throw std::invalid_argument("QuantizedLayer: scales are not consecutive powers of two");
    }
  }
  if (n_bits >= 1 && scales[0] != -2 * scales[1]) {
    throw std::invalid_argument("QuantizedLayer: sign scale must be -2 * scales[1]");
  }
}

double mean_abs_error(const RealMatrix& a, const RealMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("mean_abs_error: shape mismatch");
  }
  if (a.empty()) return 0.0;
  double err = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    err += std::abs(static_cast<double>(a.values()[i]) - static_cast<double>(b.values()[i]));
  }
  return err / static_cast<double>(a.size());
}

RoundedMatrix quantize_round(const RealMatrix& w, int n, double clip) {
  check_bits(n, 2, "quantize_round");
  if (!(clip > 0.0)) throw std::invalid_argument("quantize_round: clip must be positive");
  RoundedMatrix out{w, 0.0, false};
  if (w.empty()) {
    out.degenerate = true;
    return out;
  }
  const Range r = clamped_range(w.values(), clip);
  const double d = (r.hi - r.lo) / std::ldexp(1.0, n);
  if (!(d > 0.0)) {
    out.degenerate = true;
    return out;
  }
  out.step = d;
  auto dst = out.values.values();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double c = std::clamp(static_cast<double>(w.values()[i]), -clip, clip);
    dst[i] = static_cast<float>(d * std::round(c / d));
  }
  return out;
}

RoundedMatrix quantize_1bit(const RealMatrix& w) {
  RoundedMatrix out{RealMatrix(w.rows(), w.cols()), 0.0, false};
  if (w.empty()) {
    out.degenerate = true;
    return out;
  }
  const double v = median_abs(w.values());
  if (max_abs(w.values()) == 0.0) out.degenerate = true;
  out.step = v;
  auto dst = out.values.values();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = static_cast<float>(w.values()[i] >= 0.0f ? v : -v);
  }
  return out;
}

double optimize_clip(const RealMatrix& w, int n, const ClipSearchConfig& cfg) {
  check_bits(n, 2, "optimize_clip");
  if (cfg.num_candidates < 1) throw std::invalid_argument("optimize_clip: need >= 1 candidate");
  const double top = max_abs(w.values());
  if (top == 0.0) return std::numeric_limits<double>::infinity();
  double best_clip = top;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t i = cfg.num_candidates; i >= 1; --i) {
    const double t = (i == cfg.num_candidates)
                         ? top
                         : top * static_cast<double>(i) / static_cast<double>(cfg.num_candidates);
    const double err = rounding_error(w.values(), n, t);
    if (err < best_err) {
      best_err = err;
      best_clip = t;
    }
  }
  return best_clip;
}

FixedPointWeights quantize_weights_fixed(const RealMatrix& w, int n, int frac_bits,
                                         const ClipSearchConfig& cfg) {
  check_bits(n, 1, "quantize_weights_fixed");
  check_frac(frac_bits, "quantize_weights_fixed");
  FixedPointWeights out;
  out.values = IntMatrix(w.rows(), w.cols());
  out.n_bits = n;
  out.frac_bits = frac_bits;
  if (w.empty() || max_abs(w.values()) == 0.0) {
    out.degenerate = true;
    return out;
  }
  const double unit = std::ldexp(1.0, frac_bits);
  auto dst = out.values.values();

  if (n == 1) {
    const Range r = clamped_range(w.values(), std::numeric_limits<double>::infinity());
    out.step = (r.hi - r.lo) / 2.0;
    const double v = median_abs(w.values()) * unit;
    if (v == 0.0) {
      out.degenerate = true;
      return out;
    }
    const int lo = std::max(0, static_cast<int>(std::floor(std::log2(v))));
    const int hi = std::max(0, static_cast<int>(std::ceil(std::log2(v))));
    int best = lo;
    double best_err = std::numeric_limits<double>::infinity();
    for (int s : {lo, hi}) {
      const double mag = std::ldexp(1.0, s) / unit;
      double err = 0.0;
      for (float x : w.values()) err += std::abs((x >= 0.0f ? mag : -mag) - double{x});
      if (err < best_err) {
        best_err = err;
        best = s;
      }
    }
    if (best + 1 > 31) {
      throw std::overflow_error("quantize_weights_fixed: 1-bit magnitude overflows 32-bit range; "
                                "reduce frac_bits by " + std::to_string(best - 30));
    }
    out.shift = best;
    const std::int64_t mag = std::int64_t{1} << best;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = w.values()[i] >= 0.0f ? mag : -mag;
    return out;
  }

  out.clip = optimize_clip(w, n, cfg);
  const Range r = clamped_range(w.values(), out.clip);
  out.step = (r.hi - r.lo) / std::ldexp(1.0, n);

  const double top = std::ldexp(1.0, n) - 1.0;
  const double bottom = -std::ldexp(1.0, n);
  int s = 0;
  for (;; ++s) {
    const double grid = std::ldexp(unit, -s);
    if (std::round(r.hi * grid) <= top && std::round(r.lo * grid) >= bottom) break;
  }
  if (s + n > 31) {
    throw std::overflow_error("quantize_weights_fixed: W_q overflows 32-bit two's complement; "
                              "reduce frac_bits by " + std::to_string(s + n - 31));
  }
  out.shift = s;
  const double grid = std::ldexp(unit, -s);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double c = std::clamp(static_cast<double>(w.values()[i]), -out.clip, out.clip);
    dst[i] = static_cast<std::int64_t>(std::round(c * grid)) * (std::int64_t{1} << s);
  }
  return out;
}

QuantizedLayer decompose_fixed(const FixedPointWeights& wq) {
  const int n = wq.n_bits;
  const int s = wq.shift;
  check_bits(n, 1, "decompose_fixed");
  if (s < 0 || s + n > 31) throw std::invalid_argument("decompose_fixed: shift out of range");

  QuantizedLayer layer;
  layer.rows = wq.values.rows();
  layer.cols = wq.values.cols();
  layer.n_bits = n;
  layer.frac_bits = wq.frac_bits;
  layer.degenerate = wq.degenerate;
  layer.scales.resize(static_cast<std::size_t>(n) + 1);
  layer.scales[0] = -(std::int64_t{1} << (s + n));
  for (int i = 1; i <= n; ++i) layer.scales[static_cast<std::size_t>(i)] = std::int64_t{1} << (s + n - i);

  const std::int64_t lo = -(std::int64_t{1} << (s + n));
  const std::int64_t hi = (std::int64_t{1} << (s + n)) - (std::int64_t{1} << s);
  const std::int64_t low_mask = (std::int64_t{1} << s) - 1;
  const std::size_t wpr = words_for(layer.cols);
  std::vector<std::vector<std::uint64_t>> words(static_cast<std::size_t>(n) + 1,
                                                std::vector<std::uint64_t>(layer.rows * wpr, 0));
  for (std::size_t r = 0; r < layer.rows; ++r) {
    for (std::size_t c = 0; c < layer.cols; ++c) {
      const std::int64_t v = wq.values(r, c);
      if (v < lo || v > hi || (v & low_mask) != 0) {
        throw std::invalid_argument("decompose_fixed: value " + std::to_string(v) +
                                    " not representable with " + std::to_string(n) +
                                    " bitlayers at shift " + std::to_string(s));
      }
      const auto u = static_cast<std::uint64_t>(v);
      const std::size_t word = r * wpr + c / kWordBits;
      const std::uint64_t bit = std::uint64_t{1} << (c % kWordBits);
      for (int i = 0; i <= n; ++i) {
        const int pos = (i == 0) ? s + n : s + n - i;
        if ((u >> pos) & 1u) words[static_cast<std::size_t>(i)][word] |= bit;
      }
    }
  }
  for (auto& w : words) layer.bitlayers.emplace_back(layer.rows, layer.cols, std::move(w));
  return layer;
}

QuantizedLayer decompose_bitlayers(const RealMatrix& w, int n, int frac_bits,
                                   const ClipSearchConfig& cfg) {
  return decompose_fixed(quantize_weights_fixed(w, n, frac_bits, cfg));
}

FixedPointVector quantize_activation(std::span<const float> x, int k, int frac_bits) {
  if (k < 1 || k > 32) throw std::invalid_argument("quantize_activation: k must be in [1, 32]");
  check_frac(frac_bits, "quantize_activation");
  const double lo = -std::ldexp(1.0, k - 1);
  const double hi = std::ldexp(1.0, k - 1) - 1.0;
  FixedPointVector out;
  out.frac_bits = frac_bits;
  out.values.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double t = std::floor(std::ldexp(static_cast<double>(x[i]), frac_bits));
    if (std::isnan(t)) {
      t = 0.0;
      ++out.saturated;
    } else if (t < lo || t > hi) {
      t = std::clamp(t, lo, hi);
      ++out.saturated;
    }
    out.values[i] = static_cast<std::int32_t>(t);
  }
  return out;
}

int fit_activation_frac_bits(std::span<const float> x, int k, int max_frac_bits) {
  const double m = max_abs(x);
  int f = max_frac_bits;
  const double limit = std::ldexp(1.0, k - 1);
  while (f > 0 && std::ldexp(m, f) >= limit) --f;
  return f;
}

IntMatrix reconstruct_integers(const QuantizedLayer& layer) {
  IntMatrix out(layer.rows, layer.cols);
  for (std::size_t i = 0; i < layer.bitlayers.size(); ++i) {
    const BitMatrix& b = layer.bitlayers[i];
    for (std::size_t r = 0; r < layer.rows; ++r) {
      for (std::size_t c = 0; c < layer.cols; ++c) {
        if (b.get(r, c)) out(r, c) += layer.scales[i];
      }
    }
  }
  return out;
}

RealMatrix reconstruct(const QuantizedLayer& layer) {
  const IntMatrix ints = reconstruct_integers(layer);
  RealMatrix out(layer.rows, layer.cols);
  for (std::size_t i = 0; i < ints.size(); ++i) {
    out.values()[i] = static_cast<float>(std::ldexp(static_cast<double>(ints.values()[i]), -layer.frac_bits));
  }
  return out;
}

}  // namespace pbatch
