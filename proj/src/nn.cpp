#include "pbatch/nn.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <stdexcept>

namespace pbatch {

namespace {

std::string shape(const RealMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void expect_shape(const RealMatrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw std::invalid_argument(std::string("layer ") + what + " is " + shape(m) + ", expected " +
                                std::to_string(rows) + "x" + std::to_string(cols));
  }
}

void add_into(RealVector& acc, std::span<const float> v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

int parse_int(std::string_view s, std::string_view whole) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw std::invalid_argument("bad precision assignment '" + std::string(whole) + "': '" +
                                std::string(s) + "' is not an integer");
  }
  return v;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::linear: return "linear";
    case LayerKind::rnn: return "rnn";
    case LayerKind::lstm: return "lstm";
  }
  return "?";
}

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

void LayerSpec::validate() const {
  const std::size_t g = gate_rows();
  expect_shape(weight, g, in_dim, "weight");
  if (recurrent_kind()) {
    expect_shape(recurrent, g, out_dim, "recurrent weight");
  } else if (!recurrent.empty()) {
    throw std::invalid_argument("linear layer carries a recurrent weight");
  }
  if (bias.size() != g) {
    throw std::invalid_argument("layer bias has " + std::to_string(bias.size()) +
                                " entries, expected " + std::to_string(g));
  }
}

void Model::validate() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    try {
      layers[i].validate();
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("layer " + std::to_string(i) + ": " + e.what());
    }
    if (i > 0 && layers[i].in_dim != layers[i - 1].out_dim) {
      throw std::invalid_argument("layer " + std::to_string(i) + " expects " +
                                  std::to_string(layers[i].in_dim) + " inputs but layer " +
                                  std::to_string(i - 1) + " produces " +
                                  std::to_string(layers[i - 1].out_dim));
    }
  }
}

bool Model::has_recurrent() const {
  return std::any_of(layers.begin(), layers.end(), [](const LayerSpec& l) { return l.recurrent_kind(); });
}

std::size_t Model::input_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
std::size_t Model::output_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.recurrent.size() + l.bias.size();
  return n;
}

std::string PrecisionEntry::to_string() const {
  switch (backend) {
    case Backend::float32: return "f";
    case Backend::baseline: return "(" + std::to_string(weight_bits) + ")";
    case Backend::pbatch:
      return "(" + std::to_string(weight_bits) + "," + std::to_string(activation_bits) + ")";
  }
  return "?";
}

void PrecisionEntry::validate() const {
  auto in = [](int v, std::initializer_list<int> allowed) {
    return std::find(allowed.begin(), allowed.end(), v) != allowed.end();
  };
  if (backend == Backend::pbatch) {
    if (!in(weight_bits, {1, 2, 3, 4, 8, 16})) {
      throw std::invalid_argument("PBatch weight bits must be one of 1,2,3,4,8,16 (got " +
                                  std::to_string(weight_bits) + ")");
    }
    if (!in(activation_bits, {8, 16, 32})) {
      throw std::invalid_argument("PBatch activation bits must be one of 8,16,32 (got " +
                                  std::to_string(activation_bits) + ")");
    }
  } else if (backend == Backend::baseline) {
    if (!in(weight_bits, {1, 4, 8, 16, 32})) {
      throw std::invalid_argument("baseline bits must be one of 1,4,8,16,32 (got " +
                                  std::to_string(weight_bits) + ")");
    }
  }
}

PrecisionEntry float_entry() { return {Backend::float32, 32, 32}; }
PrecisionEntry baseline_entry(int bits) { return {Backend::baseline, bits, bits}; }
PrecisionEntry pbatch_entry(int weight_bits, int activation_bits) {
  return {Backend::pbatch, weight_bits, activation_bits};
}

PrecisionAssignment PrecisionAssignment::parse(std::string_view spec) {
  std::string s;
  for (char c : spec) {
    if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
  }
  PrecisionAssignment out;
  std::size_t i = 0;
  while (i < s.size()) {
    PrecisionEntry e;
    if (s[i] == 'f' || s[i] == 'F') {
      e = float_entry();
      ++i;
    } else if (s[i] == '(') {
      const std::size_t close = s.find(')', i);
      if (close == std::string::npos) {
        throw std::invalid_argument("bad precision assignment '" + std::string(spec) +
                                    "': unclosed '('");
      }
      const std::string_view body(s.data() + i + 1, close - i - 1);
      const std::size_t comma = body.find(',');
      if (comma == std::string_view::npos) {
        e = baseline_entry(parse_int(body, spec));
      } else {
        e = pbatch_entry(parse_int(body.substr(0, comma), spec),
                         parse_int(body.substr(comma + 1), spec));
      }
      i = close + 1;
    } else {
      throw std::invalid_argument("bad precision assignment '" + std::string(spec) +
                                  "': unexpected '" + s[i] + "'");
    }
    e.validate();
    out.entries.push_back(e);
    if (i < s.size()) {
      if (s[i] != ',' || i + 1 == s.size()) {
        throw std::invalid_argument("bad precision assignment '" + std::string(spec) +
                                    "': entries must be separated by single commas");
      }
      ++i;
    }
  }
  return out;
}

PrecisionAssignment PrecisionAssignment::uniform(const PrecisionEntry& e, std::size_t layers) {
  return {std::vector<PrecisionEntry>(layers, e)};
}

std::string PrecisionAssignment::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i) out += ',';
    out += entries[i].to_string();
  }
  return out;
}

void PrecisionAssignment::validate_for(const Model& model) const {
  if (entries.size() != model.layers.size()) {
    throw std::invalid_argument("precision assignment has " + std::to_string(entries.size()) +
                                " entries for a " + std::to_string(model.layers.size()) +
                                "-layer model");
  }
  for (const auto& e : entries) e.validate();
}

MatvecOperator MatvecOperator::prepare(const RealMatrix& w, const PrecisionEntry& entry,
                                       const NnOptions& opts) {
  entry.validate();
  MatvecOperator op;
  op.entry_ = entry;
  op.opts_ = opts;
  op.rows_ = w.rows();
  op.cols_ = w.cols();
  const bool full_precision =
      entry.backend == Backend::float32 || (entry.backend == Backend::baseline && entry.weight_bits == 32);
  if (full_precision) {
    op.weights_ = &w;
  } else if (entry.backend == Backend::baseline) {
    op.weights_ = IntWeights{quantize_int_weights(w, {entry.weight_bits, opts.clip}), entry.weight_bits};
  } else {
    op.weights_ = decompose_bitlayers(w, entry.weight_bits, opts.weight_frac_bits, opts.clip);
  }
  return op;
}

RealVector MatvecOperator::apply(std::span<const float> x) const {
  if (x.size() != cols_) {
    throw std::invalid_argument("matvec: operator has " + std::to_string(cols_) +
                                " columns, input has " + std::to_string(x.size()));
  }
  if (const auto* w = std::get_if<const RealMatrix*>(&weights_)) return reference_float_matvec(**w, x);
  if (const auto* q = std::get_if<IntWeights>(&weights_)) {
    return int_quantized_matvec(q->tensor, rows_, cols_, x, q->bits).values;
  }
  if (const auto* layer = std::get_if<QuantizedLayer>(&weights_)) {
    PBatchConfig cfg;
    cfg.weight_bits = layer->n_bits;
    cfg.activation_bits = entry_.activation_bits;
    cfg.weight_frac_bits = layer->frac_bits;
    cfg.activation_frac_bits = opts_.activation_frac_bits;
    cfg.auto_activation_frac = true;
    return pbatch_matvec(*layer, x, cfg).values;
  }
  throw std::logic_error("matvec: operator not prepared");
}

std::size_t MatvecOperator::weight_bytes() const {
  if (std::holds_alternative<const RealMatrix*>(weights_)) return rows_ * cols_ * sizeof(float);
  if (const auto* q = std::get_if<IntWeights>(&weights_)) {
    return (rows_ * cols_ * static_cast<std::size_t>(q->bits) + 7) / 8;
  }
  if (const auto* layer = std::get_if<QuantizedLayer>(&weights_)) return layer->packed_bytes();
  return 0;
}

PreparedLayer PreparedLayer::prepare(const LayerSpec& spec, const PrecisionEntry& entry,
                                     const NnOptions& opts) {
  PreparedLayer out;
  out.spec = &spec;
  out.entry = entry;
  out.input = MatvecOperator::prepare(spec.weight, entry, opts);
  if (spec.recurrent_kind()) out.hidden = MatvecOperator::prepare(spec.recurrent, entry, opts);
  return out;
}

PreparedModel PreparedModel::prepare(const Model& model, const PrecisionAssignment& assignment,
                                     const NnOptions& opts) {
  model.validate();
  assignment.validate_for(model);
  PreparedModel out;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    out.layers.push_back(PreparedLayer::prepare(model.layers[i], assignment.entries[i], opts));
  }
  return out;
}

float sigmoid(float v) { return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v)))); }

float apply_activation(Activation act, float v) {
  switch (act) {
    case Activation::none: return v;
    case Activation::relu: return v > 0.0f ? v : 0.0f;
    case Activation::tanh: return std::tanh(v);
    case Activation::sigmoid: return sigmoid(v);
  }
  return v;
}

RealVector linear_forward(const PreparedLayer& layer, std::span<const float> x) {
  RealVector out = layer.input.apply(x);
  const LayerSpec& spec = *layer.spec;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply_activation(spec.activation, out[i] + spec.bias[i]);
  return out;
}

RealVector rnn_cell(const PreparedLayer& layer, std::span<const float> x_t,
                    std::span<const float> h_prev) {
  const LayerSpec& spec = *layer.spec;
  if (h_prev.size() != spec.out_dim) throw std::invalid_argument("rnn_cell: hidden state size mismatch");
  RealVector pre = layer.input.apply(x_t);
  add_into(pre, layer.hidden.apply(h_prev));
  for (std::size_t i = 0; i < pre.size(); ++i) pre[i] = apply_activation(spec.activation, pre[i] + spec.bias[i]);
  return pre;
}

std::pair<RealVector, RealVector> lstm_cell(const PreparedLayer& layer, std::span<const float> x_t,
                                            std::span<const float> h_prev,
                                            std::span<const float> c_prev) {
  const LayerSpec& spec = *layer.spec;
  const std::size_t h = spec.out_dim;
  if (h_prev.size() != h || c_prev.size() != h) {
    throw std::invalid_argument("lstm_cell: state size mismatch");
  }
  RealVector gates = layer.input.apply(x_t);
  add_into(gates, layer.hidden.apply(h_prev));
  for (std::size_t i = 0; i < gates.size(); ++i) gates[i] += spec.bias[i];

  RealVector h_t(h), c_t(h);
  for (std::size_t j = 0; j < h; ++j) {
    const float i_g = sigmoid(gates[j]);
    const float f_g = sigmoid(gates[h + j]);
    const float g_g = std::tanh(gates[2 * h + j]);
    const float o_g = sigmoid(gates[3 * h + j]);
    c_t[j] = f_g * c_prev[j] + i_g * g_g;
    h_t[j] = o_g * std::tanh(c_t[j]);
  }
  return {std::move(h_t), std::move(c_t)};
}

RealVector linear_forward(const LayerSpec& layer, std::span<const float> x,
                          const PrecisionEntry& entry, const NnOptions& opts) {
  layer.validate();
  return linear_forward(PreparedLayer::prepare(layer, entry, opts), x);
}

RealVector rnn_cell(const LayerSpec& layer, std::span<const float> x_t,
                    std::span<const float> h_prev, const PrecisionEntry& entry,
                    const NnOptions& opts) {
  layer.validate();
  return rnn_cell(PreparedLayer::prepare(layer, entry, opts), x_t, h_prev);
}

std::pair<RealVector, RealVector> lstm_cell(const LayerSpec& layer, std::span<const float> x_t,
                                            std::span<const float> h_prev,
                                            std::span<const float> c_prev,
                                            const PrecisionEntry& entry, const NnOptions& opts) {
  layer.validate();
  return lstm_cell(PreparedLayer::prepare(layer, entry, opts), x_t, h_prev, c_prev);
}

Sequence apply_layer(const PreparedLayer& layer, const Sequence& input, bool keep_sequence) {
  const LayerSpec& spec = *layer.spec;
  Sequence out;
  if (spec.kind == LayerKind::linear) {
    out.reserve(input.size());
    for (const auto& x : input) out.push_back(linear_forward(layer, x));
    return out;
  }
  RealVector h(spec.out_dim, 0.0f);
  RealVector c(spec.out_dim, 0.0f);
  for (const auto& x : input) {
    if (spec.kind == LayerKind::rnn) {
      h = rnn_cell(layer, x, h);
    } else {
      auto [h_next, c_next] = lstm_cell(layer, x, h, c);
      h = std::move(h_next);
      c = std::move(c_next);
    }
    if (keep_sequence) out.push_back(h);
  }
  if (!keep_sequence) out.push_back(std::move(h));
  return out;
}

RealVector model_forward(const PreparedModel& model, const Sequence& input) {
  if (input.empty()) throw std::invalid_argument("model_forward: empty input");
  const auto& layers = model.layers;
  std::size_t last_recurrent = layers.size();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].spec->recurrent_kind()) last_recurrent = i;
  }
  if (last_recurrent == layers.size() && input.size() != 1) {
    throw std::invalid_argument("model_forward: sequence input given to a model without recurrent layers");
  }
  Sequence state = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const bool keep = layers[i].spec->recurrent_kind() && i < last_recurrent;
    state = apply_layer(layers[i], state, keep);
  }
  return state.back();
}

RealVector model_forward(const Model& model, const Sequence& input,
                         const PrecisionAssignment& assignment, const NnOptions& opts) {
  return model_forward(PreparedModel::prepare(model, assignment, opts), input);
}

Sequence to_sequence(const Model& model, std::span<const float> features) {
  const std::size_t in = model.input_dim();
  if (in == 0) throw std::invalid_argument("to_sequence: model has no layers");
  if (!model.layers.front().recurrent_kind()) {
    if (features.size() != in) {
      throw std::invalid_argument("input has " + std::to_string(features.size()) +
                                  " features, model expects " + std::to_string(in));
    }
    return {RealVector(features.begin(), features.end())};
  }
  if (features.empty() || features.size() % in != 0) {
    throw std::invalid_argument("input of " + std::to_string(features.size()) +
                                " features does not split into timesteps of " + std::to_string(in));
  }
  Sequence seq;
  for (std::size_t t = 0; t < features.size(); t += in) {
    seq.emplace_back(features.begin() + static_cast<std::ptrdiff_t>(t),
                     features.begin() + static_cast<std::ptrdiff_t>(t + in));
  }
  return seq;
}

std::size_t argmax(std::span<const float> v) {
  return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

}  // namespace pbatch
