#include "fedafd/submodel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedafd {

namespace {
constexpr double kScoreEpsilon = 1e-6;
}

ScoreMap make_score_map(const Architecture& arch) {
  ScoreMap map;
  for (int idx : prunable_layer_indices(arch)) {
    map.scores[idx] =
        std::vector<double>(arch.layers[idx].unit_count(), 0.0);
  }
  return map;
}

int kept_count(int units, double fdr) {
  const long k = std::lround((1.0 - fdr) * units);
  return static_cast<int>(std::max(1L, k));
}

void validate_fdr(double fdr) {
  if (!(fdr >= 0.0 && fdr < 1.0)) {
    throw std::invalid_argument("fdr must be in [0,1)");
  }
}

std::optional<std::string> fdr_warning(double fdr) {
  if (fdr > 0.0 && (fdr < 0.10 || fdr > 0.50)) {
    return "fdr=" + std::to_string(fdr) +
           " is outside the recommended 10%-50% dropout band; higher rates "
           "generally only work on larger models";
  }
  return std::nullopt;
}

SubModelSpec full_spec(const Architecture& arch) {
  SubModelSpec spec;
  spec.fdr = 0.0;
  for (int idx : prunable_layer_indices(arch)) {
    std::vector<int> all(arch.layers[idx].unit_count());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    spec.kept[idx] = std::move(all);
  }
  return spec;
}

SubModelSpec select_random(const Architecture& arch, double fdr, Rng& rng) {
  validate_fdr(fdr);
  auto prunable = prunable_layer_indices(arch);
  if (prunable.empty() && fdr > 0.0) {
    throw std::invalid_argument(
        "select_random: architecture has no prunable layer");
  }
  SubModelSpec spec;
  spec.fdr = fdr;
  for (int idx : prunable) {
    const int n = arch.layers[idx].unit_count();
    spec.kept[idx] = rng.sample_without_replacement(n, kept_count(n, fdr));
  }
  return spec;
}

SubModelSpec select_weighted(const Architecture& arch, const ScoreMap& map,
                             double fdr, Rng& rng) {
  validate_fdr(fdr);
  auto prunable = prunable_layer_indices(arch);
  if (prunable.empty() && fdr > 0.0) {
    throw std::invalid_argument(
        "select_weighted: architecture has no prunable layer");
  }
  SubModelSpec spec;
  spec.fdr = fdr;
  for (int idx : prunable) {
    const int n = arch.layers[idx].unit_count();
    auto it = map.scores.find(idx);
    if (it == map.scores.end() ||
        it->second.size() != static_cast<std::size_t>(n)) {
      throw std::invalid_argument(
          "select_weighted: score map does not match layer " +
          std::to_string(idx));
    }
    for (double s : it->second) {
      if (s < 0.0) {
        throw std::invalid_argument("select_weighted: negative score");
      }
    }
    const int k = kept_count(n, fdr);
    // Sequential draws without replacement, renormalizing after each pick.
    std::vector<double> weights(it->second);
    for (double& w : weights) w += kScoreEpsilon;
    std::vector<int> alive(n);
    for (int i = 0; i < n; ++i) alive[i] = i;
    std::vector<int> kept;
    kept.reserve(k);
    for (int draw = 0; draw < k; ++draw) {
      double total = 0.0;
      for (int u : alive) total += weights[u];
      double r = rng.next_unit() * total;
      std::size_t pick = alive.size() - 1;
      double acc = 0.0;
      for (std::size_t j = 0; j < alive.size(); ++j) {
        acc += weights[alive[j]];
        if (r < acc) {
          pick = j;
          break;
        }
      }
      kept.push_back(alive[pick]);
      alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    std::sort(kept.begin(), kept.end());
    spec.kept[idx] = std::move(kept);
  }
  return spec;
}

namespace {

struct LayerSlice {
  std::vector<int> out_kept;  // kept rows (Dense) / filters (Conv2d)
  std::vector<int> in_kept;   // kept input columns / input channels
};

std::vector<int> all_indices(int n) {
  std::vector<int> v(n);
  for (int i = 0; i < n; ++i) v[i] = i;
  return v;
}

void check_spec(const Architecture& arch, const SubModelSpec& spec) {
  auto prunable = prunable_layer_indices(arch);
  if (spec.kept.size() != prunable.size()) {
    throw std::invalid_argument("spec: expected kept sets for " +
                                std::to_string(prunable.size()) +
                                " prunable layers, got " +
                                std::to_string(spec.kept.size()));
  }
  for (int idx : prunable) {
    auto it = spec.kept.find(idx);
    if (it == spec.kept.end()) {
      throw std::invalid_argument("spec: missing kept set for layer " +
                                  std::to_string(idx));
    }
    const int n = arch.layers[idx].unit_count();
    const auto& kept = it->second;
    if (kept.empty()) {
      throw std::invalid_argument("spec: empty kept set for layer " +
                                  std::to_string(idx));
    }
    for (std::size_t j = 0; j < kept.size(); ++j) {
      if (kept[j] < 0 || kept[j] >= n ||
          (j > 0 && kept[j] <= kept[j - 1])) {
        throw std::invalid_argument(
            "spec: kept indices for layer " + std::to_string(idx) +
            " must be strictly increasing and < " + std::to_string(n));
      }
    }
  }
}

// One slice per parameterized layer. Unit identity flows through Relu and
// MaxPool untouched; a Dense layer after a conv/pool stage maps surviving
// channels to their flattened column blocks.
std::vector<LayerSlice> build_slices(const Architecture& arch,
                                     const SubModelSpec& spec) {
  check_spec(arch, spec);
  auto shapes = activation_shapes(arch);
  std::vector<LayerSlice> slices;
  std::vector<int> prev_kept;  // kept units of the previous parameterized layer
  bool prev_is_conv = false;

  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    if (!l.parameterized()) continue;
    LayerSlice s;
    auto kept_it = spec.kept.find(static_cast<int>(i));
    s.out_kept = l.prunable ? kept_it->second : all_indices(l.unit_count());

    if (l.kind == LayerSpec::Kind::Dense) {
      if (prev_kept.empty()) {
        s.in_kept = all_indices(l.in_units);  // fed by the intact input
      } else if (prev_is_conv) {
        // Flattened [c,h,w] input: each surviving channel keeps its h*w
        // column block.
        const auto& in_shape = shapes[i];
        const int hw = static_cast<int>(in_shape[1] * in_shape[2]);
        s.in_kept.reserve(prev_kept.size() * static_cast<std::size_t>(hw));
        for (int c : prev_kept) {
          for (int p = 0; p < hw; ++p) s.in_kept.push_back(c * hw + p);
        }
      } else {
        s.in_kept = prev_kept;
      }
      prev_is_conv = false;
    } else {  // Conv2d
      s.in_kept = prev_kept.empty() ? all_indices(l.in_channels) : prev_kept;
      prev_is_conv = true;
    }
    prev_kept = s.out_kept;
    slices.push_back(std::move(s));
  }
  return slices;
}

}  // namespace

ExtractResult extract(const ModelParams& global, const Architecture& arch,
                      const SubModelSpec& spec) {
  auto pidx = param_layer_indices(arch);
  if (global.layers.size() != pidx.size()) {
    throw std::invalid_argument("extract: params do not match architecture");
  }
  auto slices = build_slices(arch, spec);

  ExtractResult out;
  out.arch = arch;
  for (std::size_t p = 0; p < pidx.size(); ++p) {
    const LayerSpec& l = arch.layers[pidx[p]];
    const LayerSlice& s = slices[p];
    const LayerParams& g = global.layers[p];
    LayerParams sub;
    LayerSpec& sub_spec = out.arch.layers[pidx[p]];

    if (l.kind == LayerSpec::Kind::Dense) {
      const std::size_t fin = static_cast<std::size_t>(l.in_units);
      sub.weights = Tensor({s.out_kept.size(), s.in_kept.size()});
      sub.biases = Tensor({s.out_kept.size()});
      for (std::size_t r = 0; r < s.out_kept.size(); ++r) {
        const double* src =
            &g.weights.values[static_cast<std::size_t>(s.out_kept[r]) * fin];
        double* dst = &sub.weights.values[r * s.in_kept.size()];
        for (std::size_t c = 0; c < s.in_kept.size(); ++c) {
          dst[c] = src[s.in_kept[c]];
        }
        sub.biases.values[r] = g.biases.values[s.out_kept[r]];
      }
      sub_spec.in_units = static_cast<int>(s.in_kept.size());
      sub_spec.out_units = static_cast<int>(s.out_kept.size());
    } else {
      const std::size_t cin = static_cast<std::size_t>(l.in_channels);
      const std::size_t ksz =
          static_cast<std::size_t>(l.kernel_h) * l.kernel_w;
      sub.weights = Tensor({s.out_kept.size(), s.in_kept.size(),
                            static_cast<std::size_t>(l.kernel_h),
                            static_cast<std::size_t>(l.kernel_w)});
      sub.biases = Tensor({s.out_kept.size()});
      for (std::size_t co = 0; co < s.out_kept.size(); ++co) {
        for (std::size_t ci = 0; ci < s.in_kept.size(); ++ci) {
          const double* src =
              &g.weights.values[(static_cast<std::size_t>(s.out_kept[co]) *
                                     cin +
                                 static_cast<std::size_t>(s.in_kept[ci])) *
                                ksz];
          double* dst =
              &sub.weights.values[(co * s.in_kept.size() + ci) * ksz];
          std::copy(src, src + ksz, dst);
        }
        sub.biases.values[co] = g.biases.values[s.out_kept[co]];
      }
      sub_spec.in_channels = static_cast<int>(s.in_kept.size());
      sub_spec.out_channels = static_cast<int>(s.out_kept.size());
    }
    out.params.layers.push_back(std::move(sub));
  }
  validate_arch(out.arch);
  return out;
}

ModelParams lift(const ModelParams& global, const Architecture& arch,
                 const SubModelSpec& spec, const ModelParams& trained_sub) {
  auto pidx = param_layer_indices(arch);
  if (global.layers.size() != pidx.size() ||
      trained_sub.layers.size() != pidx.size()) {
    throw std::invalid_argument("lift: params do not match architecture");
  }
  auto slices = build_slices(arch, spec);

  ModelParams out = global;
  for (std::size_t p = 0; p < pidx.size(); ++p) {
    const LayerSpec& l = arch.layers[pidx[p]];
    const LayerSlice& s = slices[p];
    const LayerParams& sub = trained_sub.layers[p];
    LayerParams& dst = out.layers[p];

    if (l.kind == LayerSpec::Kind::Dense) {
      if (sub.weights.shape !=
              std::vector<std::size_t>{s.out_kept.size(), s.in_kept.size()} ||
          sub.biases.shape != std::vector<std::size_t>{s.out_kept.size()}) {
        throw std::invalid_argument(
            "lift: sub-model shapes do not match spec at layer " +
            std::to_string(pidx[p]));
      }
      const std::size_t fin = static_cast<std::size_t>(l.in_units);
      for (std::size_t r = 0; r < s.out_kept.size(); ++r) {
        double* drow =
            &dst.weights.values[static_cast<std::size_t>(s.out_kept[r]) * fin];
        const double* srow = &sub.weights.values[r * s.in_kept.size()];
        for (std::size_t c = 0; c < s.in_kept.size(); ++c) {
          drow[s.in_kept[c]] = srow[c];
        }
        dst.biases.values[s.out_kept[r]] = sub.biases.values[r];
      }
    } else {
      const std::size_t ksz =
          static_cast<std::size_t>(l.kernel_h) * l.kernel_w;
      if (sub.weights.shape !=
              std::vector<std::size_t>{s.out_kept.size(), s.in_kept.size(),
                                       static_cast<std::size_t>(l.kernel_h),
                                       static_cast<std::size_t>(l.kernel_w)} ||
          sub.biases.shape != std::vector<std::size_t>{s.out_kept.size()}) {
        throw std::invalid_argument(
            "lift: sub-model shapes do not match spec at layer " +
            std::to_string(pidx[p]));
      }
      const std::size_t cin = static_cast<std::size_t>(l.in_channels);
      for (std::size_t co = 0; co < s.out_kept.size(); ++co) {
        for (std::size_t ci = 0; ci < s.in_kept.size(); ++ci) {
          const double* src =
              &sub.weights.values[(co * s.in_kept.size() + ci) * ksz];
          double* d =
              &dst.weights.values[(static_cast<std::size_t>(s.out_kept[co]) *
                                       cin +
                                   static_cast<std::size_t>(s.in_kept[ci])) *
                                  ksz];
          std::copy(src, src + ksz, d);
        }
        dst.biases.values[s.out_kept[co]] = sub.biases.values[co];
      }
    }
  }
  return out;
}

ScoreMap update_score_map(const ScoreMap& map, const SubModelSpec& spec,
                          double l_prev, double l_cur) {
  if (!(l_prev > 0.0) || !(l_cur < l_prev)) {
    throw std::logic_error(
        "update_score_map: requires l_cur < l_prev and l_prev > 0");
  }
  const double increment = (l_prev - l_cur) / l_prev;
  ScoreMap out = map;
  for (const auto& [layer, kept] : spec.kept) {
    auto it = out.scores.find(layer);
    if (it == out.scores.end()) {
      throw std::invalid_argument(
          "update_score_map: spec layer missing from score map");
    }
    for (int u : kept) {
      it->second.at(static_cast<std::size_t>(u)) += increment;
    }
  }
  return out;
}

std::size_t sub_param_count(const Architecture& arch,
                            const SubModelSpec& spec) {
  auto slices = build_slices(arch, spec);
  auto pidx = param_layer_indices(arch);
  std::size_t total = 0;
  for (std::size_t p = 0; p < pidx.size(); ++p) {
    const LayerSpec& l = arch.layers[pidx[p]];
    const LayerSlice& s = slices[p];
    if (l.kind == LayerSpec::Kind::Dense) {
      total += s.out_kept.size() * s.in_kept.size() + s.out_kept.size();
    } else {
      total += s.out_kept.size() * s.in_kept.size() *
                   static_cast<std::size_t>(l.kernel_h) * l.kernel_w +
               s.out_kept.size();
    }
  }
  return total;
}

nlohmann::json spec_to_json(const SubModelSpec& spec) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [layer, kept] : spec.kept) {
    j[std::to_string(layer)] = kept;
  }
  return j;
}

}  // namespace fedafd
