#pragma once
// Evaluation at the trace level: per-horizon MAE and two snippet correlation
// summaries, plus CSV/SVG report emission.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "volcast/model.hpp"
#include "volcast/segtrace.hpp"
#include "volcast/tensor.hpp"
#include "volcast/trainer.hpp"

namespace volcast {

// Per-neuron values for every (start, lead time) pair. starts hold context
// endpoints t; entry (s, h, n) refers to the prediction or recording for
// time t = starts[s] + h, h in 1..horizon.
struct SnippetGrid {
  std::vector<std::int64_t> starts;
  std::int64_t horizon = 0;
  std::int64_t neurons = 0;
  std::vector<double> values;  // [start][h-1][neuron]

  static SnippetGrid zeros(std::vector<std::int64_t> starts, std::int64_t horizon,
                           std::int64_t neurons);
  double at(std::int64_t s, std::int64_t h, std::int64_t n) const {
    return values[static_cast<std::size_t>((s * horizon + (h - 1)) * neurons + n)];
  }
  double& at(std::int64_t s, std::int64_t h, std::int64_t n) {
    return values[static_cast<std::size_t>((s * horizon + (h - 1)) * neurons + n)];
  }
  void check_compatible(const SnippetGrid& other) const;
};

// Mean absolute error over starts and neurons, one entry per lead time.
std::vector<double> mae_per_horizon(const SnippetGrid& preds, const SnippetGrid& targets);

// Pearson correlation of each predicted snippet (all lead times from one
// start) against the recording, averaged over starts then neurons.
// Zero-variance snippets contribute 0. Requires horizon >= 2.
double corr_h(const SnippetGrid& preds, const SnippetGrid& targets);

// Fixed lead time h: per neuron, assemble the prediction series across
// consecutive starts, correlate every consecutive horizon-length window with
// the recording, and average over windows, starts grid, then neurons.
double corr_w(const SnippetGrid& preds, const SnippetGrid& targets, std::int64_t h);

// Recorded values arranged as a grid: entry (s, h, n) = trace(n, starts[s]+h).
SnippetGrid recorded_grid(const TraceMatrix& traces, const std::vector<std::int64_t>& starts,
                          std::int64_t horizon);

// Copy-last baseline: every lead time predicts the value at the context
// endpoint, entry (s, h, n) = trace(n, starts[s]).
SnippetGrid copy_last_grid(const TraceMatrix& traces, const std::vector<std::int64_t>& starts,
                           std::int64_t horizon);

// Runs the model over every (start, h) and reduces predictions to per-neuron
// trace values (distributional heads decode first). Starts must leave room
// for context before and horizon after.
SnippetGrid model_grid(UNet<float>& model, const ModelConfig& cfg, const Tensor4f& movie,
                       const NeuronIndex& idx, const std::vector<std::int64_t>& starts);

// Valid context endpoints within the intervals, thinned to at most
// max_starts consecutive runs-preserving picks. Consecutive choice keeps
// corr_w windows meaningful, so thinning takes a contiguous block.
std::vector<std::int64_t> eval_starts(const std::vector<TimeInterval>& intervals,
                                      std::int64_t C, std::int64_t H, std::int64_t max_starts);

struct ConditionReport {
  std::string name;
  std::vector<double> mae;     // per horizon
  std::vector<double> corr_w;  // per horizon
  double corr_h = 0.0;
};

ConditionReport summarize(const std::string& name, const SnippetGrid& preds,
                          const SnippetGrid& targets);

// Writes <name>.csv per condition (horizon, mae, corr_w), summary.csv with
// per-condition corr_h, aggregate.csv as the mean across conditions, and
// optionally mae_vs_horizon.svg. Conditions must be nonempty and agree on
// the horizon.
void report(const std::map<std::string, ConditionReport>& conditions,
            const std::filesystem::path& out_dir, bool svg);

}  // namespace volcast
