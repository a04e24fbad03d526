#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pbatch/nn.hpp"
#include "pbatch/quantizer.hpp"

namespace pbatch {

// PBM1 model files. Tensors per layer: linear = weight, bias;
// rnn/lstm = weight, recurrent, bias.
std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(std::span<const std::uint8_t> bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

// One decomposed weight matrix of a model. role 0 = input weight, 1 = recurrent.
struct QuantizedTensor {
  std::uint32_t layer = 0;
  std::uint8_t role = 0;
  QuantizedLayer bits;
};

// PBQ1 packed-bitlayer files.
std::vector<std::uint8_t> serialize_quantized(const std::vector<QuantizedTensor>& tensors);
std::vector<QuantizedTensor> deserialize_quantized(std::span<const std::uint8_t> bytes);

void save_quantized(const std::vector<QuantizedTensor>& tensors, const std::filesystem::path& path);
std::vector<QuantizedTensor> load_quantized(const std::filesystem::path& path);

// Decomposes every weight matrix of `model` into n magnitude bitlayers.
std::vector<QuantizedTensor> quantize_model(const Model& model, int n, int frac_bits,
                                            const ClipSearchConfig& clip = {});

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace pbatch
