#include "pbatch/engine.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <thread>

namespace pbatch {

namespace {

void accumulate_rows(const QuantizedLayer& layer, const InterleavedPlanes& planes,
                     std::span<const std::int64_t> plane_scales, std::size_t use_layers,
                     std::size_t row_begin, std::size_t row_end, std::span<Accumulator> acc) {
  std::vector<std::int64_t> dots(row_end - row_begin);
  for (std::size_t i = 0; i < use_layers; ++i) {
    and_popcount_dot(layer.bitlayers[i], row_begin, row_end, planes, plane_scales, dots);
    const Accumulator scale = layer.scales[i];
    for (std::size_t r = row_begin; r < row_end; ++r) acc[r] += scale * dots[r - row_begin];
  }
}

void check_layer_input(const QuantizedLayer& layer, std::span<const float> x, const PBatchConfig& cfg,
                       const char* who) {
  if (layer.cols != x.size()) {
    throw std::invalid_argument(std::string(who) + ": layer has " + std::to_string(layer.cols) +
                                " columns, input has " + std::to_string(x.size()));
  }
  if (cfg.weight_bits != layer.n_bits || cfg.weight_frac_bits != layer.frac_bits) {
    throw std::invalid_argument(std::string(who) + ": config (n=" + std::to_string(cfg.weight_bits) +
                                ", frac=" + std::to_string(cfg.weight_frac_bits) +
                                ") does not match layer (n=" + std::to_string(layer.n_bits) +
                                ", frac=" + std::to_string(layer.frac_bits) + ")");
  }
  if (cfg.activation_bits < 1 || cfg.activation_bits > 32) {
    throw std::invalid_argument(std::string(who) + ": activation bits must be in [1, 32]");
  }
}

}  // namespace

std::vector<Accumulator> pbatch_accumulate(const QuantizedLayer& layer, const Bitplanes& planes,
                                           std::size_t use_layers, std::size_t threads) {
  if (planes.planes.cols() != layer.cols) {
    throw std::invalid_argument("pbatch_accumulate: planes have " +
                                std::to_string(planes.planes.cols()) + " columns, layer has " +
                                std::to_string(layer.cols));
  }
  if (use_layers == 0 || use_layers > layer.bitlayers.size()) {
    throw std::invalid_argument("pbatch_accumulate: use_layers must be in [1, " +
                                std::to_string(layer.bitlayers.size()) + "], got " +
                                std::to_string(use_layers));
  }
  std::vector<Accumulator> acc(layer.rows, 0);
  if (layer.rows == 0) return acc;
  const InterleavedPlanes packed = interleave_planes(planes.planes);
  const std::span<const std::int64_t> ps = planes.scales;
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, layer.rows));
  if (threads == 1) {
    accumulate_rows(layer, packed, ps, use_layers, 0, layer.rows, acc);
    return acc;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (layer.rows + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(layer.rows, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] { accumulate_rows(layer, packed, ps, use_layers, begin, end, acc); });
  }
  for (auto& th : pool) th.join();
  return acc;
}

float rescale_accumulator(Accumulator acc, int shift) {
  return static_cast<float>(std::ldexp(static_cast<double>(acc), -shift));
}

MatvecResult pbatch_matvec_partial(const QuantizedLayer& layer, std::span<const float> x,
                                   const PBatchConfig& cfg, std::size_t use_layers) {
  check_layer_input(layer, x, cfg, "pbatch_matvec");
  if (use_layers == 0) {
    throw std::invalid_argument("pbatch_matvec_partial: the sign layer is mandatory (use_layers >= 1)");
  }
  const int frac = cfg.auto_activation_frac
                       ? fit_activation_frac_bits(x, cfg.activation_bits, cfg.activation_frac_bits)
                       : cfg.activation_frac_bits;
  const FixedPointVector xq = quantize_activation(x, cfg.activation_bits, frac);
  const Bitplanes planes = bitplane_transpose(xq, cfg.activation_bits);
  const auto acc = pbatch_accumulate(layer, planes, use_layers, cfg.threads);

  MatvecResult out;
  out.saturated = xq.saturated + planes.saturated;
  out.activation_frac_bits = frac;
  out.values.resize(acc.size());
  const int shift = layer.frac_bits + frac;
  for (std::size_t r = 0; r < acc.size(); ++r) out.values[r] = rescale_accumulator(acc[r], shift);
  return out;
}

MatvecResult pbatch_matvec(const QuantizedLayer& layer, std::span<const float> x,
                           const PBatchConfig& cfg) {
  return pbatch_matvec_partial(layer, x, cfg, layer.bitlayers.size());
}

RealVector reference_float_matvec(const RealMatrix& w, std::span<const float> x) {
  if (w.cols() != x.size()) {
    throw std::invalid_argument("reference_float_matvec: matrix has " + std::to_string(w.cols()) +
                                " columns, input has " + std::to_string(x.size()));
  }
  // Each row is a sequential double sum; eight rows advance together so the
  // dependency chains overlap.
  constexpr std::size_t kRows = 8;
  const std::size_t rows = w.rows();
  const std::size_t cols = w.cols();
  RealVector out(rows);
  std::size_t r = 0;
  for (; r + kRows <= rows; r += kRows) {
    double acc[kRows] = {};
    const float* base = w.row(r).data();
    for (std::size_t c = 0; c < cols; ++c) {
      const double xc = x[c];
      for (std::size_t i = 0; i < kRows; ++i) acc[i] += static_cast<double>(base[i * cols + c]) * xc;
    }
    for (std::size_t i = 0; i < kRows; ++i) out[r + i] = static_cast<float>(acc[i]);
  }
  for (; r < rows; ++r) {
    double acc = 0.0;
    const auto row = w.row(r);
    for (std::size_t c = 0; c < cols; ++c) acc += static_cast<double>(row[c]) * static_cast<double>(x[c]);
    out[r] = static_cast<float>(acc);
  }
  return out;
}

}  // namespace pbatch
