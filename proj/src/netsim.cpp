#include "fedafd/netsim.hpp"

#include <algorithm>
#include <stdexcept>

namespace fedafd {

void NetworkModel::validate() const {
  if (!(down_mbps_lo > 0.0 && down_mbps_hi >= down_mbps_lo)) {
    throw std::invalid_argument(
        "network: download range must be positive with lo <= hi");
  }
  if (!(up_mbps_lo > 0.0 && up_mbps_hi >= up_mbps_lo)) {
    throw std::invalid_argument(
        "network: upload range must be positive with lo <= hi");
  }
  if (compute_seconds_per_round < 0.0) {
    throw std::invalid_argument("network: compute seconds must be >= 0");
  }
}

LinkRates sample_rates(const NetworkModel& model, Rng& rng) {
  model.validate();
  LinkRates r;
  r.down_mbps = rng.next_uniform(model.down_mbps_lo, model.down_mbps_hi);
  r.up_mbps = rng.next_uniform(model.up_mbps_lo, model.up_mbps_hi);
  return r;
}

double transfer_seconds(std::uint64_t bytes, double rate_mbps) {
  if (!(rate_mbps > 0.0)) {
    throw std::invalid_argument("transfer_seconds: rate must be positive");
  }
  return static_cast<double>(bytes) * 8.0 / (rate_mbps * 1e6);
}

double round_time(
    std::span<const std::pair<std::uint64_t, std::uint64_t>> per_client_bytes,
    const LinkRates& rates, double compute_seconds) {
  if (per_client_bytes.empty()) {
    throw std::invalid_argument("round_time: no clients");
  }
  double worst = 0.0;
  for (const auto& [down, up] : per_client_bytes) {
    const double t = transfer_seconds(down, rates.down_mbps) +
                     compute_seconds + transfer_seconds(up, rates.up_mbps);
    worst = std::max(worst, t);
  }
  return worst;
}

std::optional<double> convergence_minutes(
    std::span<const std::pair<double, double>> eval_rows,
    double target_accuracy) {
  for (const auto& [cum_seconds, accuracy] : eval_rows) {
    if (accuracy >= target_accuracy) return cum_seconds / 60.0;
  }
  return std::nullopt;
}

double speedup_ratio(double baseline_minutes, double variant_minutes) {
  if (!(variant_minutes > 0.0)) {
    throw std::invalid_argument("speedup_ratio: variant time must be positive");
  }
  return baseline_minutes / variant_minutes;
}

}  // namespace fedafd
