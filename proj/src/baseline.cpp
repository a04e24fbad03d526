#include "pbatch/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pbatch {

namespace {

void check_int_bits(int bits) {
  if (bits != 1 && bits != 4 && bits != 8 && bits != 16) {
    throw std::invalid_argument("integer baseline: bits must be one of 1, 4, 8, 16 (got " +
                                std::to_string(bits) + ")");
  }
}

std::int32_t qmax_for(int bits) { return (std::int32_t{1} << (bits - 1)) - 1; }

}  // namespace

IntTensor quantize_int_weights(const RealMatrix& w, const IntQuantConfig& cfg) {
  check_int_bits(cfg.bits);
  IntTensor out;
  out.values.assign(w.size(), 0);
  double top = 0.0;
  for (float v : w.values()) top = std::max(top, std::abs(double{v}));
  if (top == 0.0) {
    out.degenerate = true;
    return out;
  }
  if (cfg.bits == 1) {
    const RoundedMatrix code = quantize_1bit(w);
    out.scale = code.step;
    for (std::size_t i = 0; i < w.size(); ++i) out.values[i] = w.values()[i] >= 0.0f ? 1 : -1;
    out.degenerate = code.step == 0.0;
    return out;
  }
  const double clip = optimize_clip(w, cfg.bits, cfg.clip);
  const std::int32_t qmax = qmax_for(cfg.bits);
  out.scale = clip / qmax;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double q = std::round(static_cast<double>(w.values()[i]) / out.scale);
    out.values[i] = static_cast<std::int32_t>(std::clamp<double>(q, -qmax, qmax));
  }
  return out;
}

IntTensor quantize_int_activation(std::span<const float> x, int bits) {
  check_int_bits(bits);
  IntTensor out;
  out.values.assign(x.size(), 0);
  double top = 0.0;
  double sum_abs = 0.0;
  for (float v : x) {
    top = std::max(top, std::abs(double{v}));
    sum_abs += std::abs(double{v});
  }
  if (top == 0.0) {
    out.degenerate = true;
    return out;
  }
  if (bits == 1) {
    // Mean magnitude: ReLU outputs are often more than half zeros, which
    // would make a median magnitude zero.
    out.scale = sum_abs / static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out.values[i] = x[i] >= 0.0f ? 1 : -1;
    return out;
  }
  const std::int32_t qmax = qmax_for(bits);
  out.scale = top / qmax;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double q = std::round(static_cast<double>(x[i]) / out.scale);
    out.values[i] = static_cast<std::int32_t>(std::clamp<double>(q, -qmax, qmax));
  }
  return out;
}

BaselineResult int_quantized_matvec(const IntTensor& wq, std::size_t rows, std::size_t cols,
                                    std::span<const float> x, int bits) {
  if (cols != x.size()) {
    throw std::invalid_argument("int_quantized_matvec: matrix has " + std::to_string(cols) +
                                " columns, input has " + std::to_string(x.size()));
  }
  if (wq.values.size() != rows * cols) {
    throw std::invalid_argument("int_quantized_matvec: weight tensor size mismatch");
  }
  const IntTensor xq = quantize_int_activation(x, bits);
  BaselineResult out;
  out.values.assign(rows, 0.0f);
  out.degenerate = wq.degenerate || xq.degenerate;
  if (out.degenerate) return out;
  const double scale = wq.scale * xq.scale;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int32_t* row = wq.values.data() + r * cols;
    std::int64_t acc = 0;
    for (std::size_t c = 0; c < cols; ++c) acc += std::int64_t{row[c]} * xq.values[c];
    out.values[r] = static_cast<float>(static_cast<double>(acc) * scale);
  }
  return out;
}

BaselineResult int_quantized_matvec(const RealMatrix& w, std::span<const float> x,
                                    const IntQuantConfig& cfg) {
  return int_quantized_matvec(quantize_int_weights(w, cfg), w.rows(), w.cols(), x, cfg.bits);
}

float round_to_half(float v) {
  if (std::isnan(v)) return v;
  const double a = std::abs(static_cast<double>(v));
  double r;
  if (a >= 65520.0) {
    r = std::numeric_limits<double>::infinity();
  } else if (a < std::ldexp(1.0, -14)) {
    r = std::nearbyint(std::ldexp(a, 24)) * std::ldexp(1.0, -24);
  } else {
    int e = 0;
    std::frexp(a, &e);
    const int quantum = e - 1 - 10;
    r = std::ldexp(std::nearbyint(std::ldexp(a, -quantum)), quantum);
  }
  return static_cast<float>(std::signbit(v) ? -r : r);
}

Float16Result float16_matvec(const RealMatrix& w, std::span<const float> x) {
  if (w.cols() != x.size()) {
    throw std::invalid_argument("float16_matvec: matrix has " + std::to_string(w.cols()) +
                                " columns, input has " + std::to_string(x.size()));
  }
  Float16Result out;
  std::vector<double> xh(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) {
    xh[c] = round_to_half(x[c]);
    if (std::isinf(xh[c])) out.overflow = true;
  }
  out.values.resize(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto row = w.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double wh = round_to_half(row[c]);
      if (std::isinf(wh)) out.overflow = true;
      acc += wh * xh[c];
    }
    out.values[r] = static_cast<float>(acc);
    if (std::isinf(out.values[r])) out.overflow = true;
  }
  return out;
}

}  // namespace pbatch
