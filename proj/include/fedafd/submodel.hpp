#pragma once

// Sub-model machinery: per-unit importance scores, random and score-weighted
// selection of kept units, slicing global parameters down to a sub-model and
// lifting trained sub-model parameters back into global shape.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedafd/model.hpp"
#include "fedafd/rng.hpp"

namespace fedafd {

// Per prunable layer, one nonnegative score per droppable unit (hidden
// neuron for Dense, output filter for Conv2d). Keyed by arch layer index.
struct ScoreMap {
  std::map<int, std::vector<double>> scores;

  bool operator==(const ScoreMap&) const = default;
};

ScoreMap make_score_map(const Architecture& arch);  // all zeros

// Sorted kept-unit indices per prunable layer; non-prunable layers
// implicitly keep all units.
struct SubModelSpec {
  double fdr = 0.0;
  std::map<int, std::vector<int>> kept;  // arch layer index -> kept units

  bool operator==(const SubModelSpec&) const = default;
};

// max(1, round((1 - fdr) * n)) units survive per prunable layer.
int kept_count(int units, double fdr);

// Throws unless 0 <= fdr < 1.
void validate_fdr(double fdr);

// Guidance message when fdr falls outside the recommended 10%-50% band.
std::optional<std::string> fdr_warning(double fdr);

// Keep-everything spec (every prunable layer keeps all units).
SubModelSpec full_spec(const Architecture& arch);

// Uniform random kept subsets of the required size per prunable layer.
SubModelSpec select_random(const Architecture& arch, double fdr, Rng& rng);

// Sequential weighted sampling without replacement, weight = score + 1e-6,
// so all-zero layers degenerate to uniform selection.
SubModelSpec select_weighted(const Architecture& arch, const ScoreMap& map,
                             double fdr, Rng& rng);

struct ExtractResult {
  ModelParams params;
  Architecture arch;
};

// Slices kept rows/columns (Dense) or filter/channel slabs (Conv2d) out of
// the global parameters. A Dense layer fed by a flattened conv/pool output
// keeps the input columns of surviving channels' spatial positions.
ExtractResult extract(const ModelParams& global, const Architecture& arch,
                      const SubModelSpec& spec);

// Writes trained sub-model parameters back into a copy of the global model;
// coordinates outside the spec are untouched. lift(g, spec, extract(g,
// spec).params) == g bitwise.
ModelParams lift(const ModelParams& global, const Architecture& arch,
                 const SubModelSpec& spec, const ModelParams& trained_sub);

// Adds (l_prev - l_cur) / l_prev to the scores of the spec's kept units.
// Only valid on strict improvement: throws when l_cur >= l_prev or
// l_prev <= 0.
ScoreMap update_score_map(const ScoreMap& map, const SubModelSpec& spec,
                          double l_prev, double l_cur);

// Analytic parameter count of the sub-model a spec induces.
std::size_t sub_param_count(const Architecture& arch,
                            const SubModelSpec& spec);

// {"<layer index>": [kept indices], ...} for logging.
nlohmann::json spec_to_json(const SubModelSpec& spec);

}  // namespace fedafd
