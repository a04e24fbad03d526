#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <optional>
#include <stdexcept>

#include "pbatch/baseline.hpp"
#include "pbatch/dataset.hpp"
#include "pbatch/engine.hpp"
#include "pbatch/harness.hpp"
#include "pbatch/model_io.hpp"
#include "pbatch/nn.hpp"
#include "pbatch/quantizer.hpp"

namespace py = pybind11;
using namespace pbatch;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

RealMatrix to_matrix(const FloatArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return RealMatrix(rows, cols, std::vector<float>(a.data(), a.data() + rows * cols));
}

RealVector to_vector(const FloatArray& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D array, got " + std::to_string(a.ndim()) + "-D");
  return RealVector(a.data(), a.data() + a.shape(0));
}

py::array_t<float> to_array(const RealVector& v) {
  py::array_t<float> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

template <typename T>
py::array_t<T> to_array(const Matrix<T>& m) {
  py::array_t<T> out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

PBatchConfig make_config(const QuantizedLayer& q, int activation_bits, std::optional<int> activation_frac_bits) {
  PBatchConfig cfg;
  cfg.weight_bits = q.n_bits;
  cfg.activation_bits = activation_bits;
  cfg.weight_frac_bits = q.frac_bits;
  cfg.auto_activation_frac = !activation_frac_bits.has_value();
  if (activation_frac_bits) cfg.activation_frac_bits = *activation_frac_bits;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bitlayer-decomposed quantized matrix-vector products";

  py::class_<QuantizedLayer>(m, "QuantizedLayer")
      .def_readonly("scales", &QuantizedLayer::scales)
      .def_readonly("frac_bits", &QuantizedLayer::frac_bits)
      .def_readonly("rows", &QuantizedLayer::rows)
      .def_readonly("cols", &QuantizedLayer::cols)
      .def_readonly("n_bits", &QuantizedLayer::n_bits)
      .def_readonly("degenerate", &QuantizedLayer::degenerate)
      .def_property_readonly("packed_bytes", &QuantizedLayer::packed_bytes)
      .def_property_readonly("bitlayers",
                             [](const QuantizedLayer& q) {
                               py::list out;
                               for (const auto& b : q.bitlayers) out.append(to_array(unpack_bit_matrix(b)));
                               return out;
                             })
      .def("integers", [](const QuantizedLayer& q) { return to_array(reconstruct_integers(q)); })
      .def("reconstruct", [](const QuantizedLayer& q) { return to_array(reconstruct(q)); });

  m.def(
      "decompose",
      [](const FloatArray& w, int bits, int frac_bits) { return decompose_bitlayers(to_matrix(w), bits, frac_bits); },
      py::arg("w"), py::arg("bits"), py::arg("frac_bits") = kDefaultFracBits,
      "Quantize a weight matrix to `bits` magnitude bitlayers plus a sign layer.");

  m.def(
      "quantize_round",
      [](const FloatArray& w, int bits, double clip) { return to_array(quantize_round(to_matrix(w), bits, clip).values); },
      py::arg("w"), py::arg("bits"), py::arg("clip") = std::numeric_limits<double>::infinity());
  m.def("optimize_clip", [](const FloatArray& w, int bits) { return optimize_clip(to_matrix(w), bits); }, py::arg("w"),
        py::arg("bits"));

  m.def(
      "matvec",
      [](const QuantizedLayer& q, const FloatArray& x, int activation_bits, std::optional<int> activation_frac_bits,
         std::optional<std::size_t> use_layers) {
        const PBatchConfig cfg = make_config(q, activation_bits, activation_frac_bits);
        const RealVector xv = to_vector(x);
        const MatvecResult r = use_layers ? pbatch_matvec_partial(q, xv, cfg, *use_layers) : pbatch_matvec(q, xv, cfg);
        return to_array(r.values);
      },
      py::arg("layer"), py::arg("x"), py::arg("activation_bits") = 32, py::arg("activation_frac_bits") = py::none(),
      py::arg("use_layers") = py::none(),
      "Bitlayer product W_q x. Without activation_frac_bits the fixed point is fitted to max|x|.");

  m.def(
      "float_matvec", [](const FloatArray& w, const FloatArray& x) {
        return to_array(reference_float_matvec(to_matrix(w), to_vector(x)));
      },
      py::arg("w"), py::arg("x"));
  m.def(
      "int_matvec",
      [](const FloatArray& w, const FloatArray& x, int bits) {
        IntQuantConfig cfg;
        cfg.bits = bits;
        return to_array(int_quantized_matvec(to_matrix(w), to_vector(x), cfg).values);
      },
      py::arg("w"), py::arg("x"), py::arg("bits") = 8);

  py::class_<Model>(m, "Model")
      .def_property_readonly("num_layers", [](const Model& mdl) { return mdl.layers.size(); })
      .def_property_readonly("input_dim", &Model::input_dim)
      .def_property_readonly("output_dim", &Model::output_dim)
      .def_property_readonly("parameter_count", &Model::parameter_count)
      .def(
          "forward",
          [](const Model& mdl, const FloatArray& x, const std::string& assignment) {
            const RealVector xv = to_vector(x);
            const auto a = assignment.empty() ? PrecisionAssignment::uniform(float_entry(), mdl.layers.size())
                                              : PrecisionAssignment::parse(assignment);
            const auto full = a.entries.size() == 1 && mdl.layers.size() > 1
                                  ? PrecisionAssignment::uniform(a.entries.front(), mdl.layers.size())
                                  : a;
            return to_array(model_forward(mdl, to_sequence(mdl, xv), full));
          },
          py::arg("x"), py::arg("assignment") = "");
  m.def("load_model", &load_model, py::arg("path"));

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("size", &Dataset::size)
      .def_property_readonly("feature_dim", &Dataset::feature_dim)
      .def_property_readonly("features", [](const Dataset& d) { return to_array(d.features); })
      .def_readonly("labels", &Dataset::labels);
  m.def(
      "load_dataset",
      [](const std::string& path, const std::optional<std::string>& labels) {
        return load_dataset(path, labels ? std::filesystem::path(*labels) : std::filesystem::path{});
      },
      py::arg("path"), py::arg("labels") = py::none(),
      "Load IDX images (labels found next to them unless given) or a label-first CSV.");

  m.def(
      "eval_accuracy",
      [](const Model& mdl, const Dataset& d, const std::string& assignment) {
        auto a = PrecisionAssignment::parse(assignment);
        if (a.entries.size() == 1) a = PrecisionAssignment::uniform(a.entries.front(), mdl.layers.size());
        return eval_accuracy(mdl, a, d);
      },
      py::arg("model"), py::arg("dataset"), py::arg("assignment"));
}
