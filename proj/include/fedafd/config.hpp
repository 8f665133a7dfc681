#pragma once

// Experiment configuration: defaults, file parsing (flat key=value or JSON)
// and validation with field-level error messages. Flags override file
// values; every knob of the round loop, codecs, dataset and link model
// lives here.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedafd/compression.hpp"
#include "fedafd/data.hpp"
#include "fedafd/model.hpp"
#include "fedafd/netsim.hpp"

namespace fedafd {

struct ExperimentConfig {
  // model
  std::string arch = "mlp";       // mlp | cnn
  std::vector<int> hidden = {64};  // mlp hidden widths / cnn dense width

  // dataset
  int clients = 100;
  int per_client = 100;
  int classes = 10;
  int dim = 32;
  std::string partition = "noniid";  // iid | noniid
  double separation = 3.0;
  std::string dataset_file;  // optional: load instead of synthesizing

  // dropout
  std::string mode = "none";  // none | fd | afd_multi | afd_single
  double fdr = 0.25;

  // codecs
  bool quant8_down = false;
  bool quant8_up = false;
  bool dgc_up = false;
  double dgc_ratio = 0.25;
  double dgc_clip = 1.0;
  double dgc_momentum = 0.9;

  // round loop
  int rounds = 100;
  double fraction = 0.3;  // 0.1 when mode=afd_single and not set explicitly
  double lr = 0.05;
  int epochs = 1;
  int batch_size = 10;
  double target_accuracy = 0.85;
  int eval_every = 10;
  std::uint64_t seed = 1;
  std::string aggregate = "downloaded";  // downloaded | trained_only

  // link model
  NetworkModel net;

  // output
  std::string out_dir = "out";

  Architecture build_arch() const;
  PartitionMode partition_mode() const;
  DgcConfig dgc_config() const;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;

  // Non-fatal configuration advice (fdr outside the 10%-50% band,
  // single-model dropout on non-IID shards).
  std::vector<std::string> warnings() const;
};

// Flat "key = value" lines ('#' comments) or a JSON object; the format is
// detected from the first non-space character. Unknown keys are an error.
std::map<std::string, std::string> read_config_file(const std::string& path);

// Applies file values then overrides on top of the defaults; resolves the
// mode-dependent fraction default; validates. Throws on unknown keys, type
// errors and constraint violations, naming the field.
ExperimentConfig parse_config(
    const std::map<std::string, std::string>& file_values,
    const std::map<std::string, std::string>& overrides);

}  // namespace fedafd
