#pragma once

// Multi-seed orchestration: runs the same configuration under several seeds
// (sequentially or on a bounded thread pool), collects per-seed metrics and
// builds the summary document (final accuracy mean/std, convergence minutes,
// optional speedup against a named baseline summary).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedafd/config.hpp"
#include "fedafd/federation.hpp"

namespace fedafd {

struct SeedOutcome {
  std::uint64_t seed = 0;
  MetricsTable metrics;
  std::vector<ControllerLogRow> controller_log;
  double final_accuracy = 0.0;
  std::optional<double> convergence_min;
  std::uint64_t cum_down_bytes = 0;
  std::uint64_t cum_up_bytes = 0;
};

// Runs one experiment per seed; results come back in the seeds' given order
// regardless of scheduling. max_threads <= 1 means sequential. When csv_dir
// is set, each run streams its rows to <csv_dir>/metrics.csv (single seed)
// or <csv_dir>/metrics_seed<seed>.csv, flushed per row.
std::vector<SeedOutcome> run_seeds(const ExperimentConfig& base,
                                   const std::vector<std::uint64_t>& seeds,
                                   int max_threads,
                                   const std::string& csv_dir = "");

// Aggregate document written as summary.json. `baseline` is a previously
// written summary used for the speedup ratio; pass nullptr to skip.
nlohmann::json summarize(const ExperimentConfig& config,
                         const std::vector<SeedOutcome>& outcomes,
                         const nlohmann::json* baseline);

// Sample standard deviation (n-1); zero for fewer than two values.
double sample_std(const std::vector<double>& values);

// Resolves the effective thread budget: the parallel flag requests
// hardware_concurrency, FEDAFD_THREADS caps it.
int resolve_threads(bool parallel_requested);

}  // namespace fedafd
