#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "pbatch/baseline.hpp"
#include "pbatch/engine.hpp"
#include "pbatch/matrix.hpp"
#include "pbatch/quantizer.hpp"

namespace pbatch {

enum class LayerKind : std::uint8_t { linear = 0, rnn = 1, lstm = 2 };
enum class Activation : std::uint8_t { none = 0, relu = 1, tanh = 2, sigmoid = 3 };

std::string_view to_string(LayerKind kind);
std::string_view to_string(Activation act);

// One model layer. LSTM gate rows are concatenated in (input, forget, cell,
// output) order, so weight is 4h x in and recurrent is 4h x h.
struct LayerSpec {
  LayerKind kind = LayerKind::linear;
  Activation activation = Activation::none;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;  // hidden size for recurrent kinds
  RealMatrix weight;
  RealMatrix recurrent;  // empty for linear layers
  RealVector bias;

  std::size_t gate_rows() const { return kind == LayerKind::lstm ? 4 * out_dim : out_dim; }
  bool recurrent_kind() const { return kind != LayerKind::linear; }
  void validate() const;
};

struct Model {
  std::vector<LayerSpec> layers;

  void validate() const;
  bool has_recurrent() const;
  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const;
};

enum class Backend : std::uint8_t { float32, baseline, pbatch };

struct PrecisionEntry {
  Backend backend = Backend::float32;
  int weight_bits = 32;
  int activation_bits = 32;

  std::string to_string() const;
  void validate() const;
  bool operator==(const PrecisionEntry&) const = default;
  auto operator<=>(const PrecisionEntry&) const = default;
};

PrecisionEntry float_entry();
PrecisionEntry baseline_entry(int bits);
PrecisionEntry pbatch_entry(int weight_bits, int activation_bits);

// One entry per model layer, written "(n,k)" for PBatch, "(b)" for the
// integer baseline and "f" for full precision, comma separated.
struct PrecisionAssignment {
  std::vector<PrecisionEntry> entries;

  static PrecisionAssignment parse(std::string_view spec);
  static PrecisionAssignment uniform(const PrecisionEntry& e, std::size_t layers);
  std::string to_string() const;
  void validate_for(const Model& model) const;
};

struct NnOptions {
  int weight_frac_bits = kDefaultFracBits;
  int activation_frac_bits = kDefaultFracBits;  // cap for the per-call fixed point
  ClipSearchConfig clip{};
};

// A weight matrix prepared for one backend: kept as floats, quantized to
// integers, or decomposed into bitlayers.
class MatvecOperator {
 public:
  MatvecOperator() = default;
  static MatvecOperator prepare(const RealMatrix& w, const PrecisionEntry& entry,
                                const NnOptions& opts = {});

  RealVector apply(std::span<const float> x) const;

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  const PrecisionEntry& entry() const { return entry_; }
  // Weight bytes read per product.
  std::size_t weight_bytes() const;

 private:
  struct IntWeights {
    IntTensor tensor;
    int bits = 8;
  };
  PrecisionEntry entry_{};
  NnOptions opts_{};
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::variant<std::monostate, const RealMatrix*, IntWeights, QuantizedLayer> weights_;
};

// Layer weights prepared under one precision entry. Biases and elementwise
// operations stay in full precision.
struct PreparedLayer {
  const LayerSpec* spec = nullptr;
  PrecisionEntry entry{};
  MatvecOperator input;
  MatvecOperator hidden;  // recurrent kinds only

  static PreparedLayer prepare(const LayerSpec& spec, const PrecisionEntry& entry,
                               const NnOptions& opts = {});
};

using Sequence = std::vector<RealVector>;

// Holds pointers into `model`, which must outlive it.
struct PreparedModel {
  std::vector<PreparedLayer> layers;

  static PreparedModel prepare(const Model& model, const PrecisionAssignment& assignment,
                               const NnOptions& opts = {});
};

float apply_activation(Activation act, float v);
float sigmoid(float v);

RealVector linear_forward(const PreparedLayer& layer, std::span<const float> x);
RealVector rnn_cell(const PreparedLayer& layer, std::span<const float> x_t,
                    std::span<const float> h_prev);
std::pair<RealVector, RealVector> lstm_cell(const PreparedLayer& layer, std::span<const float> x_t,
                                            std::span<const float> h_prev,
                                            std::span<const float> c_prev);

// Convenience overloads that prepare the weights on every call.
RealVector linear_forward(const LayerSpec& layer, std::span<const float> x,
                          const PrecisionEntry& entry, const NnOptions& opts = {});
RealVector rnn_cell(const LayerSpec& layer, std::span<const float> x_t,
                    std::span<const float> h_prev, const PrecisionEntry& entry,
                    const NnOptions& opts = {});
std::pair<RealVector, RealVector> lstm_cell(const LayerSpec& layer, std::span<const float> x_t,
                                            std::span<const float> h_prev,
                                            std::span<const float> c_prev,
                                            const PrecisionEntry& entry,
                                            const NnOptions& opts = {});

// Applies one layer to a sequence. Linear layers map every element; recurrent
// layers return the full hidden-state sequence when `keep_sequence`, else only
// the final state.
Sequence apply_layer(const PreparedLayer& layer, const Sequence& input, bool keep_sequence);

RealVector model_forward(const PreparedModel& model, const Sequence& input);
RealVector model_forward(const Model& model, const Sequence& input,
                         const PrecisionAssignment& assignment, const NnOptions& opts = {});

// Splits a flat feature vector into timesteps of the first layer's input size
// for recurrent models; a single-element sequence otherwise.
Sequence to_sequence(const Model& model, std::span<const float> features);

std::size_t argmax(std::span<const float> v);

}  // namespace pbatch
