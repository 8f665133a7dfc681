#pragma once

// The two adaptive-dropout controllers. Multi-model keeps an independent
// score map, loss memory and recorded flag per client; single-model keeps
// one shared set driven by the per-round average loss. Planning never
// mutates state; feedback is applied once per client (or once per round)
// by the coordinator.

#include <optional>
#include <vector>

#include "fedafd/model.hpp"
#include "fedafd/rng.hpp"
#include "fedafd/submodel.hpp"

namespace fedafd {

struct AfdState {
  ScoreMap score_map;
  double last_loss = 0.0;  // sentinel until the first feedback arrives
  bool recorded = false;
  bool has_feedback = false;
  std::optional<SubModelSpec> last_spec;
};

class MultiModelController {
 public:
  MultiModelController(const Architecture& arch, int n_clients, double fdr);

  // First participation -> uniform random spec; recorded -> reuse the stored
  // spec; otherwise score-weighted selection. Reads only client c's state.
  SubModelSpec plan(int client, Rng& rng) const;

  // Strict improvement over the client's remembered loss stores the spec,
  // bumps its units' scores by the relative improvement and sets recorded.
  // The first feedback only seeds the loss memory.
  void feedback(int client, const SubModelSpec& spec, double loss);

  const AfdState& state(int client) const { return states_.at(client); }
  int n_clients() const { return static_cast<int>(states_.size()); }

 private:
  const Architecture* arch_;
  double fdr_;
  std::vector<AfdState> states_;
};

class SingleModelController {
 public:
  SingleModelController(const Architecture& arch, double fdr);

  // One spec per round, shared by every selected client.
  SubModelSpec plan(Rng& rng) const;

  // Driven by the unweighted mean of the selected clients' training losses.
  void feedback(const SubModelSpec& spec, const std::vector<double>& losses);

  const AfdState& state() const { return state_; }

 private:
  const Architecture* arch_;
  double fdr_;
  AfdState state_;
};

}  // namespace fedafd
