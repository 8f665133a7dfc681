#include "fedafd/afd_control.hpp"

#include <numeric>
#include <stdexcept>

namespace fedafd {

namespace {

// Shared branch structure of both algorithms' feedback step.
void apply_feedback(AfdState& s, const SubModelSpec& spec, double loss) {
  if (loss < 0.0) {
    throw std::invalid_argument("feedback: loss must be nonnegative");
  }
  if (!s.has_feedback) {
    // The loss memory still holds its init sentinel; real losses are
    // positive, so the comparison branch is skipped on the first feedback.
    s.recorded = false;
    s.has_feedback = true;
  } else if (loss < s.last_loss) {
    s.last_spec = spec;
    s.score_map = update_score_map(s.score_map, spec, s.last_loss, loss);
    s.recorded = true;
  } else {
    s.recorded = false;
  }
  s.last_loss = loss;
}

SubModelSpec plan_from(const AfdState& s, const Architecture& arch,
                       double fdr, Rng& rng) {
  if (!s.has_feedback) return select_random(arch, fdr, rng);
  if (s.recorded) return *s.last_spec;
  return select_weighted(arch, s.score_map, fdr, rng);
}

}  // namespace

MultiModelController::MultiModelController(const Architecture& arch,
                                           int n_clients, double fdr)
    : arch_(&arch), fdr_(fdr) {
  validate_fdr(fdr);
  if (n_clients < 1) {
    throw std::invalid_argument("MultiModelController: need >= 1 client");
  }
  states_.resize(n_clients);
  for (auto& s : states_) s.score_map = make_score_map(arch);
}

SubModelSpec MultiModelController::plan(int client, Rng& rng) const {
  return plan_from(states_.at(client), *arch_, fdr_, rng);
}

void MultiModelController::feedback(int client, const SubModelSpec& spec,
                                    double loss) {
  apply_feedback(states_.at(client), spec, loss);
}

SingleModelController::SingleModelController(const Architecture& arch,
                                             double fdr)
    : arch_(&arch), fdr_(fdr) {
  validate_fdr(fdr);
  state_.score_map = make_score_map(arch);
}

SubModelSpec SingleModelController::plan(Rng& rng) const {
  return plan_from(state_, *arch_, fdr_, rng);
}

void SingleModelController::feedback(const SubModelSpec& spec,
                                     const std::vector<double>& losses) {
  if (losses.empty()) {
    throw std::invalid_argument("feedback: empty loss list");
  }
  const double mean =
      std::accumulate(losses.begin(), losses.end(), 0.0) /
      static_cast<double>(losses.size());
  apply_feedback(state_, spec, mean);
}

}  // namespace fedafd
