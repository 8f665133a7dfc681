#pragma once

// Simulated bandwidth clock: converts payload bytes to transfer seconds
// under an LTE-style link model (uniform per-round download/upload rates,
// shared by all clients), accumulates round times behind a synchronous
// barrier, and derives convergence time / speedup figures.

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fedafd/rng.hpp"

namespace fedafd {

struct NetworkModel {
  enum class Sampling { PerRound, PerExperiment };

  double down_mbps_lo = 5.0;
  double down_mbps_hi = 12.0;
  double up_mbps_lo = 2.0;
  double up_mbps_hi = 5.0;
  Sampling sampling = Sampling::PerRound;
  double compute_seconds_per_round = 0.0;

  void validate() const;
};

struct LinkRates {
  double down_mbps = 0.0;
  double up_mbps = 0.0;
};

LinkRates sample_rates(const NetworkModel& model, Rng& rng);

// bytes * 8 / (rate_mbps * 1e6); Mbps means 10^6 bits per second.
double transfer_seconds(std::uint64_t bytes, double rate_mbps);

// Synchronous barrier: the slowest client's download + compute + upload.
double round_time(
    std::span<const std::pair<std::uint64_t, std::uint64_t>> per_client_bytes,
    const LinkRates& rates, double compute_seconds);

struct ClockLedger {
  struct Entry {
    double down_s = 0.0;   // slowest client's download time
    double up_s = 0.0;     // slowest client's upload time
    double total_s = 0.0;  // barrier time for the round
  };

  std::vector<Entry> entries;
  double cumulative_seconds = 0.0;

  void add(const Entry& e) {
    entries.push_back(e);
    cumulative_seconds += e.total_s;
  }
};

// Cumulative minutes at the first evaluation with accuracy >= target.
// Rows are (cumulative seconds, accuracy) in round order.
std::optional<double> convergence_minutes(
    std::span<const std::pair<double, double>> eval_rows,
    double target_accuracy);

double speedup_ratio(double baseline_minutes, double variant_minutes);

}  // namespace fedafd
