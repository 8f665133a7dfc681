#pragma once

// FedAvg round loop with pluggable dropout controller (none / fixed random /
// multi-model adaptive / single-model adaptive) and pluggable codecs, plus
// the metrics table the bandwidth clock and the CLI consume.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedafd/afd_control.hpp"
#include "fedafd/compression.hpp"
#include "fedafd/config.hpp"
#include "fedafd/data.hpp"
#include "fedafd/model.hpp"
#include "fedafd/netsim.hpp"
#include "fedafd/rng.hpp"
#include "fedafd/submodel.hpp"

namespace fedafd {

// Uniform sample without replacement of max(1, round(fraction * n)) ids,
// returned ascending.
std::vector<int> select_clients(int n, double fraction, Rng& rng);

struct ClientUpdate {
  int client_id = 0;
  ModelParams params;  // already lifted to global shape
  std::int64_t n_examples = 0;
};

// Data-size weighted mean (1/n_t) * sum(n_c * W_c). Updates are summed in
// ascending client-id order, so the result is bitwise independent of the
// input order.
ModelParams aggregate(const std::vector<ClientUpdate>& updates);

// base + sum((n_c/n_t) * (W_c - base)): algebraically the same mean, but
// coordinates no client touched pass through bitwise unchanged. The round
// loop aggregates this way so that units dropped by every selected client
// keep their exact global values.
ModelParams aggregate_around(const ModelParams& base,
                             const std::vector<ClientUpdate>& updates);

struct RoundMetrics {
  int round = 0;
  std::vector<int> selected;
  std::uint64_t down_bytes = 0;  // summed over selected clients
  std::uint64_t up_bytes = 0;
  double mean_train_loss = 0.0;  // unweighted over selected clients
  double round_seconds = 0.0;
};

struct EvalRow {
  int round = 0;
  double cum_seconds = 0.0;
  std::uint64_t cum_down_bytes = 0;
  std::uint64_t cum_up_bytes = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
};

// Frozen CSV layout: header
// round,cum_seconds,cum_down_bytes,cum_up_bytes,train_loss,test_accuracy
// with cum_seconds %.6f, train_loss %.9g, test_accuracy %.6f.
extern const char kMetricsCsvHeader[];
std::string eval_row_csv(const EvalRow& row);

struct MetricsTable {
  std::vector<EvalRow> rows;

  std::string to_csv() const;

  std::optional<double> convergence_min(double target_accuracy) const;
  double final_accuracy() const;
};

// One line per controller decision: which sub-model a client was handed and
// what the feedback did to the recorded flag.
struct ControllerLogRow {
  int round = 0;
  int client = -1;  // -1 in single-model mode (one shared decision)
  std::uint64_t spec_hash = 0;
  bool recorded = false;
  double loss = 0.0;
};

std::uint64_t spec_hash(const SubModelSpec& spec);

// One seeded experiment: dataset, model and controller state, the round
// loop, and periodic evaluation on the pooled held-out shards.
class Experiment {
 public:
  explicit Experiment(const ExperimentConfig& config);
  Experiment(const ExperimentConfig& config, FederatedDataset dataset);

  RoundMetrics run_round(int t);

  // Executes config.rounds rounds with an evaluation row at round 0, every
  // eval_every rounds and at the final round. on_row, when set, sees each
  // row as soon as it exists (the CLI streams the CSV through it).
  MetricsTable run(const std::function<void(const EvalRow&)>& on_row = {});

  const Architecture& arch() const { return arch_; }
  const ModelParams& global() const { return global_; }
  const FederatedDataset& dataset() const { return data_; }
  const ClockLedger& clock() const { return clock_; }
  const std::vector<ControllerLogRow>& controller_log() const {
    return controller_log_;
  }

 private:
  SubModelSpec plan_spec(int t, int client, const SubModelSpec* shared) const;
  void ensure_dgc_state(int client, const SubModelSpec& spec,
                        const std::vector<std::vector<std::size_t>>& shapes);

  ExperimentConfig config_;
  Architecture arch_;
  FederatedDataset data_;
  std::vector<int> trainable_;  // clients with nonempty train shards
  ModelParams global_;
  std::optional<MultiModelController> multi_;
  std::optional<SingleModelController> single_;
  std::vector<ControllerLogRow> controller_log_;
  std::vector<std::optional<SubModelSpec>> dgc_spec_;  // per client
  std::vector<std::optional<DgcState>> dgc_state_;
  ClockLedger clock_;
  std::optional<LinkRates> fixed_rates_;  // per-experiment sampling
  std::uint64_t cum_down_ = 0;
  std::uint64_t cum_up_ = 0;
  double last_train_loss_ = 0.0;
};

// Convenience wrapper: build, run, return the table.
MetricsTable run_experiment(const ExperimentConfig& config);

}  // namespace fedafd
