#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pbatch/dataset.hpp"
#include "pbatch/harness.hpp"
#include "pbatch/model_io.hpp"
#include "pbatch/nn.hpp"
#include "pbatch/quantizer.hpp"

using namespace pbatch;

namespace {

PrecisionAssignment assignment_for(const Model& model, const std::string& spec) {
  if (spec.empty()) return PrecisionAssignment::uniform(float_entry(), model.layers.size());
  auto a = PrecisionAssignment::parse(spec);
  // A single entry applies to every layer.
  if (a.entries.size() == 1 && model.layers.size() > 1) {
    a = PrecisionAssignment::uniform(a.entries.front(), model.layers.size());
  }
  a.validate_for(model);
  return a;
}

std::vector<float> read_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::vector<float> out;
  std::string tok;
  std::stringstream text;
  text << in.rdbuf();
  std::string s = text.str();
  for (char& c : s) {
    if (c == ',' || c == ';') c = ' ';
  }
  std::istringstream ws(s);
  while (ws >> tok) {
    std::size_t used = 0;
    float v = 0.0f;
    try {
      v = std::stof(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw std::runtime_error(path + ": '" + tok + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw std::runtime_error(path + ": no input values");
  return out;
}

bool is_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char head[4] = {1, 1, 1, 1};
  in.read(reinterpret_cast<char*>(head), 4);
  return in.gcount() == 4 && head[0] == 0 && head[1] == 0 && head[2] == 0x08;
}

std::vector<Backend> parse_backends(const std::vector<std::string>& names) {
  std::vector<Backend> out;
  for (const auto& n : names) {
    if (n == "pbatch") {
      out.push_back(Backend::pbatch);
    } else if (n == "baseline" || n == "int") {
      out.push_back(Backend::baseline);
    } else if (n == "float" || n == "f") {
      out.push_back(Backend::float32);
    } else {
      throw CLI::ValidationError("--backend-grid", "unknown backend '" + n + "' (pbatch, baseline, float)");
    }
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bit-layer batched quantized matrix-vector inference"};
  app.require_subcommand(1);

  NnOptions opts;
  auto add_frac_options = [&opts](CLI::App* sub) {
    sub->add_option("--weight-frac-bits", opts.weight_frac_bits, "Fixed-point fraction bits of the weights")
        ->check(CLI::Range(0, 30));
    sub->add_option("--act-frac-bits", opts.activation_frac_bits, "Upper bound on activation fraction bits")
        ->check(CLI::Range(0, 30));
  };

  // quantize
  std::string q_model, q_out;
  int q_bits = 8;
  int q_frac = kDefaultFracBits;
  auto* quant = app.add_subcommand("quantize", "Decompose every weight matrix into packed bitlayers");
  quant->add_option("model", q_model, "PBM1 model file")->required();
  quant->add_option("--bits", q_bits, "Magnitude bitlayers n (sign layer is extra)")->check(CLI::Range(1, 16));
  quant->add_option("--frac-bits", q_frac, "Weight fixed-point fraction bits")->check(CLI::Range(0, 30));
  quant->add_option("--out", q_out, "Output PBQ1 file")->required();

  // infer
  std::string i_model, i_input, i_assign, i_labels;
  std::size_t i_index = 0;
  auto* infer = app.add_subcommand("infer", "Run one forward pass and print the logits");
  infer->add_option("model", i_model, "PBM1 model file")->required();
  infer->add_option("input", i_input, "Feature file (numbers) or IDX/CSV dataset")->required();
  infer->add_option("--assignment", i_assign, "Per-layer precision, e.g. \"(8,32),(4,8),f\"");
  infer->add_option("--index", i_index, "Sample index when the input is a dataset");
  infer->add_option("--labels", i_labels, "IDX label file (derived from the image file name by default)");
  add_frac_options(infer);

  // eval
  std::string e_model, e_data, e_assign, e_labels;
  auto* eval = app.add_subcommand("eval", "Classification accuracy on a dataset");
  eval->add_option("model", e_model, "PBM1 model file")->required();
  eval->add_option("dataset", e_data, "IDX image file or CSV dataset")->required();
  eval->add_option("--assignment", e_assign, "Per-layer precision (default all float)");
  eval->add_option("--labels", e_labels, "IDX label file");
  add_frac_options(eval);

  // bench
  BenchConfig bcfg;
  std::string b_csv;
  auto* bench = app.add_subcommand("bench", "Time square matvecs for every backend");
  bench->add_option("--sizes", bcfg.sizes, "Square matrix sizes")->delimiter(',');
  bench->add_option("--weight-bits", bcfg.weight_bits, "PBatch magnitude bits")->delimiter(',');
  bench->add_option("--act-bits", bcfg.activation_bits, "PBatch activation bits")->delimiter(',');
  bench->add_option("--baseline-bits", bcfg.baseline_bits, "Integer baseline widths")->delimiter(',');
  bench->add_option("--iters", bcfg.iterations, "Products per timed run")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", bcfg.repeats, "Timed runs (minimum is reported)")->check(CLI::PositiveNumber);
  bench->add_option("--seed", bcfg.seed, "Random seed");
  bench->add_option("--csv", b_csv, "Also write the report as CSV");

  // sweep
  std::string s_model, s_data, s_labels, s_csv, s_cost = "time";
  std::vector<int> s_wgrid{1, 2, 4, 8};
  std::vector<int> s_agrid{8, 16, 32};
  std::vector<std::string> s_bgrid{"pbatch"};
  bool s_pin_last = false;
  bool s_frontier_only = false;
  SweepConfig scfg;
  auto* sweep = app.add_subcommand("sweep", "Exhaustive per-layer precision sweep with Pareto frontier");
  sweep->add_option("model", s_model, "PBM1 model file")->required();
  sweep->add_option("dataset", s_data, "IDX image file or CSV dataset")->required();
  sweep->add_option("--labels", s_labels, "IDX label file");
  sweep->add_option("--weight-grid", s_wgrid, "Weight bit choices")->delimiter(',');
  sweep->add_option("--act-grid", s_agrid, "PBatch activation bit choices")->delimiter(',');
  sweep->add_option("--backend-grid", s_bgrid, "Backends: pbatch, baseline, float")->delimiter(',');
  sweep->add_flag("--pin-last-float", s_pin_last, "Keep the final layer in full precision");
  sweep->add_option("--cost", s_cost, "Cost metric")->check(CLI::IsMember({"time", "bytes"}));
  sweep->add_option("--timing-iters", scfg.timing_iterations, "Products per timed run")->check(CLI::PositiveNumber);
  sweep->add_option("--threads", scfg.threads, "Worker threads for quality evaluation")->check(CLI::PositiveNumber);
  sweep->add_option("--csv", s_csv, "Write all points as CSV");
  sweep->add_flag("--frontier-only", s_frontier_only, "Print only non-dominated points");
  add_frac_options(sweep);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*quant) {
      const Model model = load_model(q_model);
      const auto tensors = quantize_model(model, q_bits, q_frac);
      save_quantized(tensors, q_out);
      for (const auto& t : tensors) {
        const auto& w = t.bits;
        const RealMatrix& src = t.role == 0 ? model.layers[t.layer].weight : model.layers[t.layer].recurrent;
        std::printf("layer %u %s %zux%zu  n=%d  %zu bytes  mae %.4g%s\n", t.layer,
                    t.role == 0 ? "input" : "recurrent", w.rows, w.cols, w.n_bits, w.packed_bytes(),
                    mean_abs_error(reconstruct(w), src), w.degenerate ? "  (all zero)" : "");
      }
      std::printf("wrote %s\n", q_out.c_str());
    } else if (*infer) {
      const Model model = load_model(i_model);
      const auto assignment = assignment_for(model, i_assign);
      std::vector<float> feats;
      if (is_idx(i_input) || i_input.ends_with(".csv")) {
        const Dataset ds = load_dataset(i_input, i_labels);
        if (i_index >= ds.size()) {
          throw std::invalid_argument("--index " + std::to_string(i_index) + " out of range for " +
                                      std::to_string(ds.size()) + " samples");
        }
        const auto row = ds.features.row(i_index);
        feats.assign(row.begin(), row.end());
      } else {
        feats = read_features(i_input);
      }
      const RealVector logits = model_forward(model, to_sequence(model, feats), assignment, opts);
      for (std::size_t i = 0; i < logits.size(); ++i) std::printf("%s%.6g", i ? "," : "", logits[i]);
      std::printf("\nargmax %zu\n", argmax(logits));
    } else if (*eval) {
      const Model model = load_model(e_model);
      const auto assignment = assignment_for(model, e_assign);
      const Dataset ds = load_dataset(e_data, e_labels);
      const double acc = eval_accuracy(model, assignment, ds, opts);
      std::printf("assignment %s\nsamples %zu\naccuracy %.4f\n", assignment.to_string().c_str(), ds.size(), acc);
    } else if (*bench) {
      const BenchReport report = bench_kernels(bcfg);
      std::cout << report.to_table();
      if (!b_csv.empty()) write_text(b_csv, report.to_csv());
    } else if (*sweep) {
      const Model model = load_model(s_model);
      const Dataset ds = load_dataset(s_data, s_labels);
      const auto grid = make_grid(parse_backends(s_bgrid), s_wgrid, s_agrid);
      if (grid.empty()) throw std::invalid_argument("sweep: grid has no valid entries");
      scfg.grids.assign(model.layers.size(), grid);
      if (s_pin_last && !scfg.grids.empty()) scfg.grids.back() = {float_entry()};
      scfg.cost = s_cost == "bytes" ? CostMetric::modeled_bytes : CostMetric::measured_time;
      scfg.options = opts;
      const SweepResult result = sweep_assignments(model, ds, scfg);
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
      std::cout << sweep_to_table(result, s_frontier_only);
      if (!s_csv.empty()) write_text(s_csv, sweep_to_csv(result));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
