#include "fedafd/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fedafd/submodel.hpp"

namespace fedafd {

namespace {

const std::set<std::string> kKnownKeys = {
    "arch",        "hidden",       "clients",      "per_client",
    "classes",     "dim",          "partition",    "separation",
    "dataset_file", "mode",        "fdr",          "quant8_down",
    "quant8_up",   "dgc_up",       "dgc_ratio",    "dgc_clip",
    "dgc_momentum", "rounds",      "fraction",     "lr",
    "epochs",      "batch_size",   "target_accuracy", "eval_every",
    "seed",        "aggregate",    "down_mbps_lo", "down_mbps_hi",
    "up_mbps_lo",  "up_mbps_hi",   "net_sampling", "compute_seconds",
    "out",
};

[[noreturn]] void field_error(const std::string& key, const std::string& msg) {
  throw std::invalid_argument(key + ": " + msg);
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    int r = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    field_error(key, "expected an integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    field_error(key, "expected a number, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    unsigned long long r = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    field_error(key, "expected a nonnegative integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  field_error(key, "expected a boolean, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_int(key, item));
  }
  if (out.empty()) field_error(key, "expected a comma-separated integer list");
  return out;
}

void apply(ExperimentConfig& c, const std::string& key,
           const std::string& value) {
  if (!kKnownKeys.count(key)) {
    throw std::invalid_argument("unknown config key '" + key + "'");
  }
  if (key == "arch") c.arch = value;
  else if (key == "hidden") c.hidden = parse_int_list(key, value);
  else if (key == "clients") c.clients = parse_int(key, value);
  else if (key == "per_client") c.per_client = parse_int(key, value);
  else if (key == "classes") c.classes = parse_int(key, value);
  else if (key == "dim") c.dim = parse_int(key, value);
  else if (key == "partition") c.partition = value;
  else if (key == "separation") c.separation = parse_double(key, value);
  else if (key == "dataset_file") c.dataset_file = value;
  else if (key == "mode") c.mode = value;
  else if (key == "fdr") c.fdr = parse_double(key, value);
  else if (key == "quant8_down") c.quant8_down = parse_bool(key, value);
  else if (key == "quant8_up") c.quant8_up = parse_bool(key, value);
  else if (key == "dgc_up") c.dgc_up = parse_bool(key, value);
  else if (key == "dgc_ratio") c.dgc_ratio = parse_double(key, value);
  else if (key == "dgc_clip") c.dgc_clip = parse_double(key, value);
  else if (key == "dgc_momentum") c.dgc_momentum = parse_double(key, value);
  else if (key == "rounds") c.rounds = parse_int(key, value);
  else if (key == "fraction") c.fraction = parse_double(key, value);
  else if (key == "lr") c.lr = parse_double(key, value);
  else if (key == "epochs") c.epochs = parse_int(key, value);
  else if (key == "batch_size") c.batch_size = parse_int(key, value);
  else if (key == "target_accuracy") c.target_accuracy = parse_double(key, value);
  else if (key == "eval_every") c.eval_every = parse_int(key, value);
  else if (key == "seed") c.seed = parse_u64(key, value);
  else if (key == "aggregate") c.aggregate = value;
  else if (key == "down_mbps_lo") c.net.down_mbps_lo = parse_double(key, value);
  else if (key == "down_mbps_hi") c.net.down_mbps_hi = parse_double(key, value);
  else if (key == "up_mbps_lo") c.net.up_mbps_lo = parse_double(key, value);
  else if (key == "up_mbps_hi") c.net.up_mbps_hi = parse_double(key, value);
  else if (key == "net_sampling") {
    if (value == "per_round") c.net.sampling = NetworkModel::Sampling::PerRound;
    else if (value == "per_experiment")
      c.net.sampling = NetworkModel::Sampling::PerExperiment;
    else field_error(key, "expected per_round or per_experiment");
  } else if (key == "compute_seconds") {
    c.net.compute_seconds_per_round = parse_double(key, value);
  } else if (key == "out") {
    c.out_dir = value;
  }
}

}  // namespace

Architecture ExperimentConfig::build_arch() const {
  if (arch == "mlp") return make_mlp(dim, hidden, classes);
  // cnn: interpret dim as a single-channel square image
  const int side = static_cast<int>(std::lround(std::sqrt(dim)));
  if (side * side != dim) {
    field_error("dim", "cnn needs a perfect-square dim, got " +
                           std::to_string(dim));
  }
  const int dense = hidden.empty() ? 32 : hidden.back();
  return make_cnn(1, side, side, {8}, dense, classes);
}

PartitionMode ExperimentConfig::partition_mode() const {
  return partition == "iid" ? PartitionMode::IID : PartitionMode::NonIID;
}

DgcConfig ExperimentConfig::dgc_config() const {
  return DgcConfig{dgc_ratio, dgc_clip, dgc_momentum};
}

void ExperimentConfig::validate() const {
  if (arch != "mlp" && arch != "cnn") field_error("arch", "must be mlp or cnn");
  for (int h : hidden) {
    if (h < 1) field_error("hidden", "widths must be positive");
  }
  if (clients < 1) field_error("clients", "must be >= 1");
  if (per_client < 1) field_error("per_client", "must be >= 1");
  if (classes < 2) field_error("classes", "must be >= 2");
  if (dim < 1) field_error("dim", "must be >= 1");
  if (partition != "iid" && partition != "noniid") {
    field_error("partition", "must be iid or noniid");
  }
  if (!(separation > 0.0)) field_error("separation", "must be positive");
  if (mode != "none" && mode != "fd" && mode != "afd_multi" &&
      mode != "afd_single") {
    field_error("mode", "must be one of none|fd|afd_multi|afd_single");
  }
  if (!(fdr >= 0.0 && fdr < 1.0)) field_error("fdr", "must be in [0,1)");
  if (!(dgc_ratio > 0.0 && dgc_ratio <= 1.0)) {
    field_error("dgc_ratio", "must be in (0,1]");
  }
  if (!(dgc_clip > 0.0)) field_error("dgc_clip", "must be positive");
  if (!(dgc_momentum >= 0.0 && dgc_momentum < 1.0)) {
    field_error("dgc_momentum", "must be in [0,1)");
  }
  if (rounds < 0) field_error("rounds", "must be >= 0");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    field_error("fraction", "must be in (0,1]");
  }
  if (!(lr > 0.0)) field_error("lr", "must be positive");
  if (epochs < 1) field_error("epochs", "must be >= 1");
  if (batch_size < 1) field_error("batch_size", "must be >= 1");
  if (!(target_accuracy > 0.0 && target_accuracy <= 1.0)) {
    field_error("target_accuracy", "must be in (0,1]");
  }
  if (eval_every < 1) field_error("eval_every", "must be >= 1");
  if (aggregate != "downloaded" && aggregate != "trained_only") {
    field_error("aggregate", "must be downloaded or trained_only");
  }
  try {
    net.validate();
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("net: ") + e.what());
  }
  build_arch();  // throws on inconsistent model/dataset dims
}

std::vector<std::string> ExperimentConfig::warnings() const {
  std::vector<std::string> out;
  if (mode != "none") {
    if (auto w = fdr_warning(fdr)) out.push_back(*w);
  }
  if (mode == "afd_single" && partition == "noniid") {
    out.push_back(
        "single-model adaptive dropout compares average losses taken over "
        "different client subsets each round; with non-IID shards that "
        "comparison is unreliable and the score map may not converge");
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: cannot open " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  const std::string text = buf.str();

  std::map<std::string, std::string> kv;
  const std::string trimmed = trim(text);
  if (!trimmed.empty() && trimmed[0] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::invalid_argument("config: JSON parse error: " +
                                  std::string(e.what()));
    }
    for (const auto& [key, value] : j.items()) {
      if (value.is_string()) kv[key] = value.get<std::string>();
      else if (value.is_boolean()) kv[key] = value.get<bool>() ? "true" : "false";
      else kv[key] = value.dump();
    }
    return kv;
  }

  std::stringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: expected key=value, got '" + line +
                                  "'");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

ExperimentConfig parse_config(
    const std::map<std::string, std::string>& file_values,
    const std::map<std::string, std::string>& overrides) {
  ExperimentConfig c;
  bool fraction_set = false;
  for (const auto& [k, v] : file_values) {
    apply(c, k, v);
    if (k == "fraction") fraction_set = true;
  }
  for (const auto& [k, v] : overrides) {
    apply(c, k, v);
    if (k == "fraction") fraction_set = true;
  }
  if (!fraction_set && c.mode == "afd_single") c.fraction = 0.1;
  c.validate();
  return c;
}

}  // namespace fedafd
