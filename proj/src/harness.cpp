#include "pbatch/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

#include "pbatch/baseline.hpp"
#include "pbatch/engine.hpp"

namespace pbatch {

namespace {

// Keeps benchmarked results observable so the work is not optimized away.
volatile float g_sink = 0.0f;

void consume(const RealVector& v) {
  float s = 0.0f;
  for (float x : v) s += x;
  g_sink = g_sink + s;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t, std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t b = t * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back(fn, b, e);
  }
  for (auto& th : pool) th.join();
}

RealMatrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, 1.0f / std::sqrt(static_cast<float>(cols)));
  RealMatrix m(rows, cols);
  for (auto& v : m.values()) v = dist(rng);
  return m;
}

RealVector random_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  RealVector v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string backend_name(const PrecisionEntry& e) {
  switch (e.backend) {
    case Backend::float32: return "float";
    case Backend::baseline: return "int" + std::to_string(e.weight_bits);
    case Backend::pbatch: return "pbatch";
  }
  return "?";
}

std::vector<Sequence> dataset_sequences(const Model& model, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("eval: dataset is empty");
  std::vector<Sequence> seqs;
  seqs.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) seqs.push_back(to_sequence(model, data.features.row(i)));
  return seqs;
}

// Number of times each layer's weights are applied to one input sample.
std::vector<std::size_t> layer_applications(const Model& model, std::size_t steps) {
  std::size_t last_recurrent = model.layers.size();
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (model.layers[i].recurrent_kind()) last_recurrent = i;
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    out.push_back(steps);
    if (model.layers[i].recurrent_kind() && i >= last_recurrent) steps = 1;
  }
  return out;
}

}  // namespace

std::string BenchReport::to_csv() const {
  std::ostringstream out;
  out << "size,backend,n,k,iterations,seconds,per_iter,speedup,weight_bytes,modeled_ratio,measured_ratio\n";
  for (const auto& r : rows) {
    const bool pb = r.entry.backend == Backend::pbatch;
    out << r.size << ',' << backend_name(r.entry) << ',' << (pb ? std::to_string(r.entry.weight_bits) : "")
        << ',' << (pb ? std::to_string(r.entry.activation_bits) : "") << ',' << r.iterations << ','
        << fmt("%.6e", r.seconds) << ',' << fmt("%.6e", r.per_iter) << ',' << fmt("%.4f", r.speedup) << ','
        << r.weight_bytes << ',' << fmt("%.4f", r.modeled_ratio) << ',' << fmt("%.4f", r.measured_ratio)
        << '\n';
  }
  return out.str();
}

std::string BenchReport::to_table() const {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%6s  %-8s %3s %3s %7s %12s %9s %12s %8s %8s\n", "size", "backend", "n", "k",
                "iters", "us/iter", "speedup", "weight bytes", "model x", "meas x");
  out << buf;
  for (const auto& r : rows) {
    const bool pb = r.entry.backend == Backend::pbatch;
    std::snprintf(buf, sizeof buf, "%6zu  %-8s %3s %3s %7zu %12.2f %9.3f %12zu %8.2f %8.2f\n", r.size,
                  backend_name(r.entry).c_str(), pb ? std::to_string(r.entry.weight_bits).c_str() : "-",
                  pb ? std::to_string(r.entry.activation_bits).c_str() : "-", r.iterations, r.per_iter * 1e6,
                  r.speedup, r.weight_bytes, r.modeled_ratio, r.measured_ratio);
    out << buf;
  }
  for (const auto& n : notes) out << "note: " << n << '\n';
  return out.str();
}

TimingResult time_best_of(const std::function<void()>& fn, std::size_t iterations, std::size_t repeats,
                          double min_run_seconds) {
  if (iterations == 0) throw std::invalid_argument("timing: iterations must be at least 1");
  if (repeats == 0) throw std::invalid_argument("timing: repeats must be at least 1");
  using clock = std::chrono::steady_clock;
  TimingResult res;
  res.iterations = iterations;
  auto run = [&] {
    const auto t0 = clock::now();
    for (std::size_t i = 0; i < res.iterations; ++i) fn();
    return std::chrono::duration<double>(clock::now() - t0).count();
  };
  double t = run();
  while (t < min_run_seconds && res.iterations < (std::size_t{1} << 40)) {
    res.iterations *= 2;
    res.raised = true;
    t = run();
  }
  res.seconds = t;
  for (std::size_t r = 1; r < repeats; ++r) res.seconds = std::min(res.seconds, run());
  return res;
}

double modeled_weight_ratio(const PrecisionEntry& e) {
  switch (e.backend) {
    case Backend::float32: return 1.0;
    case Backend::baseline: return 32.0 / e.weight_bits;
    case Backend::pbatch: return 32.0 / (e.weight_bits + 1);
  }
  return 1.0;
}

BenchReport bench_kernels(const BenchConfig& cfg) {
  if (cfg.iterations == 0) throw std::invalid_argument("bench: iterations must be at least 1");
  std::vector<PrecisionEntry> entries{float_entry()};
  for (int b : cfg.baseline_bits) {
    baseline_entry(b).validate();
    if (b != 32) entries.push_back(baseline_entry(b));
  }
  for (int n : cfg.weight_bits) {
    for (int k : cfg.activation_bits) {
      pbatch_entry(n, k).validate();
      entries.push_back(pbatch_entry(n, k));
    }
  }
  BenchReport report;
  std::mt19937_64 rng(cfg.seed);
  for (std::size_t size : cfg.sizes) {
    if (size < 64) throw std::invalid_argument("bench: sizes must be at least 64 (got " + std::to_string(size) + ")");
    const RealMatrix w = random_matrix(size, size, rng);
    const RealVector x = random_vector(size, rng);
    double t_float = 0.0;
    for (const auto& e : entries) {
      const MatvecOperator op = MatvecOperator::prepare(w, e, cfg.options);
      const auto timing = time_best_of([&] { consume(op.apply(x)); }, cfg.iterations, cfg.repeats, cfg.min_run_seconds);
      BenchRow row;
      row.size = size;
      row.entry = e;
      row.iterations = timing.iterations;
      row.seconds = timing.seconds;
      row.per_iter = timing.seconds / static_cast<double>(timing.iterations);
      if (e.backend == Backend::float32) t_float = row.per_iter;
      row.speedup = t_float / row.per_iter;
      row.weight_bytes = op.weight_bytes();
      row.modeled_ratio = modeled_weight_ratio(e);
      row.measured_ratio = static_cast<double>(size * size * sizeof(float)) / static_cast<double>(row.weight_bytes);
      if (timing.raised) {
        report.notes.push_back("size " + std::to_string(size) + " " + e.to_string() + ": run below " +
                               fmt("%g", cfg.min_run_seconds) + " s, iterations raised to " +
                               std::to_string(timing.iterations));
      }
      report.rows.push_back(row);
    }
  }
  return report;
}

double eval_accuracy(const PreparedModel& model, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("eval: dataset is empty");
  if (model.layers.empty()) throw std::invalid_argument("eval: model has no layers");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& first = *model.layers.front().spec;
    const auto feats = data.features.row(i);
    Sequence seq;
    if (!first.recurrent_kind()) {
      if (feats.size() != first.in_dim) {
        throw std::invalid_argument("eval: dataset has " + std::to_string(feats.size()) +
                                    " features, model expects " + std::to_string(first.in_dim));
      }
      seq.emplace_back(feats.begin(), feats.end());
    } else {
      if (feats.size() % first.in_dim != 0) {
        throw std::invalid_argument("eval: " + std::to_string(feats.size()) +
                                    " features do not split into timesteps of " + std::to_string(first.in_dim));
      }
      for (std::size_t t = 0; t < feats.size(); t += first.in_dim) {
        seq.emplace_back(feats.begin() + static_cast<std::ptrdiff_t>(t),
                         feats.begin() + static_cast<std::ptrdiff_t>(t + first.in_dim));
      }
    }
    const RealVector logits = model_forward(model, seq);
    if (argmax(logits) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double eval_accuracy(const Model& model, const PrecisionAssignment& assignment, const Dataset& data,
                     const NnOptions& opts) {
  return eval_accuracy(PreparedModel::prepare(model, assignment, opts), data);
}

void mark_dominated(std::vector<ParetoPoint>& points) {
  std::vector<std::size_t> order(points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (points[a].cost != points[b].cost) return points[a].cost < points[b].cost;
    return points[a].quality > points[b].quality;
  });
  double best_cheaper = -std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < order.size();) {
    std::size_t end = g;
    while (end < order.size() && points[order[end]].cost == points[order[g]].cost) ++end;
    const double group_best = points[order[g]].quality;
    for (std::size_t i = g; i < end; ++i) {
      ParetoPoint& p = points[order[i]];
      p.dominated = best_cheaper >= p.quality || group_best > p.quality;
    }
    best_cheaper = std::max(best_cheaper, group_best);
    g = end;
  }
}

std::vector<PrecisionEntry> make_grid(const std::vector<Backend>& backends, const std::vector<int>& weight_bits,
                                      const std::vector<int>& activation_bits) {
  std::vector<PrecisionEntry> out;
  auto add = [&out](const PrecisionEntry& e) {
    try {
      e.validate();
    } catch (const std::invalid_argument&) {
      return;
    }
    if (std::find(out.begin(), out.end(), e) == out.end()) out.push_back(e);
  };
  for (Backend b : backends) {
    if (b == Backend::float32) {
      add(float_entry());
    } else if (b == Backend::baseline) {
      for (int w : weight_bits) add(baseline_entry(w));
    } else {
      for (int w : weight_bits) {
        for (int a : activation_bits) add(pbatch_entry(w, a));
      }
    }
  }
  return out;
}

SweepResult sweep_assignments(const Model& model, const Dataset& data, const SweepConfig& cfg) {
  model.validate();
  const std::size_t L = model.layers.size();
  if (cfg.grids.size() != L) {
    throw std::invalid_argument("sweep: " + std::to_string(cfg.grids.size()) + " grids for a " +
                                std::to_string(L) + "-layer model");
  }
  SweepResult result;
  double total = 1.0;
  for (std::size_t i = 0; i < L; ++i) {
    if (cfg.grids[i].empty()) throw std::invalid_argument("sweep: grid for layer " + std::to_string(i) + " is empty");
    for (const auto& e : cfg.grids[i]) e.validate();
    total *= static_cast<double>(cfg.grids[i].size());
  }
  if (total > static_cast<double>(cfg.warn_above)) {
    result.warnings.push_back("sweep covers " + fmt("%.0f", total) + " assignments (more than " +
                              std::to_string(cfg.warn_above) + ")");
  }
  const std::vector<Sequence> inputs = dataset_sequences(model, data);
  const auto applications = layer_applications(model, inputs.front().size());

  // Prepared operators and per-layer cost for every (layer, entry).
  std::vector<std::vector<PreparedLayer>> prepared(L);
  std::vector<std::vector<double>> layer_cost(L);
  std::map<std::tuple<std::size_t, std::size_t, PrecisionEntry>, double> timing_memo;
  std::mt19937_64 rng(cfg.seed);
  auto op_cost = [&](const MatvecOperator& op) {
    if (cfg.cost == CostMetric::modeled_bytes) return static_cast<double>(op.weight_bytes());
    const auto key = std::make_tuple(op.rows(), op.cols(), op.entry());
    if (auto it = timing_memo.find(key); it != timing_memo.end()) return it->second;
    const RealVector x = random_vector(op.cols(), rng);
    const auto t = time_best_of([&] { consume(op.apply(x)); }, cfg.timing_iterations, cfg.timing_repeats);
    const double per = t.seconds / static_cast<double>(t.iterations);
    timing_memo.emplace(key, per);
    return per;
  };
  for (std::size_t i = 0; i < L; ++i) {
    for (const auto& e : cfg.grids[i]) {
      prepared[i].push_back(PreparedLayer::prepare(model.layers[i], e, cfg.options));
      const auto& pl = prepared[i].back();
      double c = op_cost(pl.input);
      if (model.layers[i].recurrent_kind()) c += op_cost(pl.hidden);
      layer_cost[i].push_back(c * static_cast<double>(applications[i]));
    }
  }
  result.timed_configurations = timing_memo.size();

  std::size_t last_recurrent = L;
  for (std::size_t i = 0; i < L; ++i) {
    if (model.layers[i].recurrent_kind()) last_recurrent = i;
  }

  std::vector<std::size_t> choice(L);
  auto record = [&](const std::vector<Sequence>& outputs) {
    std::size_t correct = 0;
    for (std::size_t s = 0; s < outputs.size(); ++s) {
      if (argmax(outputs[s].back()) == data.labels[s]) ++correct;
    }
    ParetoPoint p;
    double cost = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
      p.assignment.entries.push_back(cfg.grids[i][choice[i]]);
      cost += layer_cost[i][choice[i]];
    }
    p.quality = static_cast<double>(correct) / static_cast<double>(outputs.size());
    p.cost = cost;
    result.points.push_back(std::move(p));
  };
  // Depth-first over layers so each prefix of the assignment is evaluated once.
  std::function<void(std::size_t, const std::vector<Sequence>&)> visit =
      [&](std::size_t depth, const std::vector<Sequence>& in) {
        if (depth == L) {
          record(in);
          return;
        }
        const bool keep = model.layers[depth].recurrent_kind() && depth < last_recurrent;
        for (std::size_t c = 0; c < prepared[depth].size(); ++c) {
          choice[depth] = c;
          std::vector<Sequence> out(in.size());
          parallel_for(in.size(), cfg.threads, [&](std::size_t b, std::size_t e) {
            for (std::size_t s = b; s < e; ++s) out[s] = apply_layer(prepared[depth][c], in[s], keep);
          });
          visit(depth + 1, out);
        }
      };
  visit(0, inputs);

  mark_dominated(result.points);
  std::stable_sort(result.points.begin(), result.points.end(),
                   [](const ParetoPoint& a, const ParetoPoint& b) { return a.cost < b.cost; });
  return result;
}

std::string sweep_to_csv(const SweepResult& result) {
  std::ostringstream out;
  out << "assignment,quality,cost,frontier\n";
  for (const auto& p : result.points) {
    out << '"' << p.assignment.to_string() << "\"," << fmt("%.6f", p.quality) << ',' << fmt("%.6e", p.cost)
        << ',' << (p.dominated ? 0 : 1) << '\n';
  }
  return out.str();
}

std::string sweep_to_table(const SweepResult& result, bool frontier_only) {
  std::ostringstream out;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-40s %9s %14s %8s\n", "assignment", "accuracy", "cost", "frontier");
  out << buf;
  for (const auto& p : result.points) {
    if (frontier_only && p.dominated) continue;
    std::snprintf(buf, sizeof buf, "%-40s %9.4f %14.6e %8s\n", p.assignment.to_string().c_str(), p.quality, p.cost,
                  p.dominated ? "" : "*");
    out << buf;
  }
  for (const auto& w : result.warnings) out << "warning: " << w << '\n';
  return out.str();
}

}  // namespace pbatch
