#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pbatch/dataset.hpp"
#include "pbatch/nn.hpp"

namespace pbatch {

struct BenchConfig {
  std::vector<std::size_t> sizes{512, 1024, 2048, 4096};
  std::vector<int> weight_bits{1, 2, 4, 8};
  std::vector<int> activation_bits{8, 16, 32};
  std::vector<int> baseline_bits{8};
  std::size_t iterations = 1000;
  std::size_t repeats = 10;  // best-of
  // A timed run shorter than this is treated as below timer resolution and
  // the iteration count is doubled until it is not.
  double min_run_seconds = 1e-3;
  std::uint64_t seed = 1;
  NnOptions options{};
};

struct BenchRow {
  std::size_t size = 0;
  PrecisionEntry entry{};
  std::size_t iterations = 0;
  double seconds = 0.0;   // best run of `iterations` products
  double per_iter = 0.0;
  double speedup = 0.0;   // float time / this time, same size
  std::size_t weight_bytes = 0;
  double modeled_ratio = 1.0;   // 32 / (n + 1) for PBatch, 32 / b for the baseline
  double measured_ratio = 1.0;  // float32 bytes / weight_bytes
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::vector<std::string> notes;

  std::string to_csv() const;
  std::string to_table() const;
};

// Best of `repeats` runs of `iterations` calls. Raises the iteration count
// while a run stays under `min_run_seconds`; the count used is returned.
struct TimingResult {
  double seconds = 0.0;
  std::size_t iterations = 0;
  bool raised = false;
};
TimingResult time_best_of(const std::function<void()>& fn, std::size_t iterations, std::size_t repeats,
                          double min_run_seconds = 0.0);

// Float and baseline rows come before the PBatch rows of each size.
BenchReport bench_kernels(const BenchConfig& cfg);

double modeled_weight_ratio(const PrecisionEntry& entry);

double eval_accuracy(const PreparedModel& model, const Dataset& data);
double eval_accuracy(const Model& model, const PrecisionAssignment& assignment, const Dataset& data,
                     const NnOptions& opts = {});

struct ParetoPoint {
  PrecisionAssignment assignment;
  double quality = 0.0;  // higher is better
  double cost = 0.0;     // lower is better
  bool dominated = false;
};

// Marks points dominated in (quality up, cost down). Points equal in both are
// not considered to dominate each other.
void mark_dominated(std::vector<ParetoPoint>& points);

enum class CostMetric : std::uint8_t { measured_time, modeled_bytes };

struct SweepConfig {
  std::vector<std::vector<PrecisionEntry>> grids;  // one candidate list per layer
  NnOptions options{};
  CostMetric cost = CostMetric::measured_time;
  std::size_t timing_iterations = 200;
  std::size_t timing_repeats = 10;
  std::size_t threads = 1;
  std::size_t warn_above = 100000;
  std::uint64_t seed = 1;
};

struct SweepResult {
  std::vector<ParetoPoint> points;  // ascending cost
  std::vector<std::string> warnings;
  std::size_t timed_configurations = 0;  // distinct (shape, entry) timings
};

// Candidate entries from the cartesian product of the value lists; invalid
// combinations for a backend are skipped.
std::vector<PrecisionEntry> make_grid(const std::vector<Backend>& backends, const std::vector<int>& weight_bits,
                                      const std::vector<int>& activation_bits);

SweepResult sweep_assignments(const Model& model, const Dataset& data, const SweepConfig& cfg);

std::string sweep_to_csv(const SweepResult& result);
std::string sweep_to_table(const SweepResult& result, bool frontier_only);

}  // namespace pbatch
