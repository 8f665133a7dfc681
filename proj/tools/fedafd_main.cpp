// Experiment runner CLI: one federated-training run per seed under a single
// configuration, per-round metrics CSVs and a summary document, with an
// optional speedup comparison against a previously written baseline summary.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedafd/config.hpp"
#include "fedafd/data.hpp"
#include "fedafd/runner.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw std::invalid_argument("seeds: empty list");
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "fedafd: federated-averaging simulator with adaptive sub-model dropout "
      "and update compression"};

  std::string config_path, mode, partition, arch, out_dir, seeds_arg;
  std::string baseline_summary, save_dataset_path, load_dataset_path;
  double fdr = 0, fraction = 0, lr = 0, target = 0, dgc_ratio = 0,
         dgc_clip = 0, separation = 0;
  int rounds = 0, epochs = 0, batch_size = 0, clients = 0, eval_every = 0;
  std::uint64_t seed = 0;
  bool quant8_down = false, dgc_up = false, parallel = false;
  bool controller_log = false;

  app.add_option("--config", config_path,
                 "Config file (flat key=value or JSON object)");
  auto* o_mode = app.add_option("--mode", mode,
                                "Dropout mode: none|fd|afd_multi|afd_single");
  auto* o_arch = app.add_option("--arch", arch, "Model family: mlp|cnn");
  auto* o_part = app.add_option("--partition", partition,
                                "Data partition: iid|noniid");
  auto* o_fdr = app.add_option("--fdr", fdr, "Federated dropout rate [0,1)");
  auto* o_frac = app.add_option("--fraction", fraction,
                                "Fraction of clients per round (0,1]");
  auto* o_rounds = app.add_option("--rounds", rounds, "Training rounds");
  auto* o_lr = app.add_option("--lr", lr, "Client learning rate");
  auto* o_epochs = app.add_option("--epochs", epochs, "Local epochs per round");
  auto* o_batch = app.add_option("--batch-size", batch_size, "Mini-batch size");
  auto* o_clients = app.add_option("--clients", clients, "Number of clients");
  auto* o_eval = app.add_option("--eval-every", eval_every,
                                "Evaluation period in rounds");
  auto* o_sep = app.add_option("--separation", separation,
                               "Synthetic class-cluster separation");
  auto* o_target = app.add_option("--target-accuracy", target,
                                  "Convergence target accuracy (0,1]");
  auto* o_seed = app.add_option("--seed", seed, "Master seed (single run)");
  app.add_option("--seeds", seeds_arg,
                 "Comma-separated seed list (overrides --seed)");
  auto* o_q8 = app.add_flag("--quant8-down", quant8_down,
                            "Quantize downlink weights (8-bit + Hadamard)");
  auto* o_dgc = app.add_flag("--dgc-up", dgc_up,
                             "Sparsify uplink weight deltas (top-k)");
  auto* o_ratio = app.add_option("--dgc-ratio", dgc_ratio,
                                 "Fraction of coordinates kept by top-k");
  auto* o_clip = app.add_option("--dgc-clip", dgc_clip,
                                "Global L2 clip for uplink deltas");
  auto* o_out = app.add_option("--out", out_dir, "Output directory");
  app.add_option("--baseline-summary", baseline_summary,
                 "summary.json of a baseline run, for the speedup ratio");
  app.add_flag("--parallel", parallel,
               "Run seeds in parallel (capped by FEDAFD_THREADS)");
  app.add_flag("--controller-log", controller_log,
               "Also write controller.csv with per-round dropout decisions");
  app.add_option("--save-dataset", save_dataset_path,
                 "Write the synthesized dataset to this file and exit");
  app.add_option("--load-dataset", load_dataset_path,
                 "Reuse a previously saved dataset file");

  CLI11_PARSE(app, argc, argv);

  try {
    std::map<std::string, std::string> file_kv;
    if (!config_path.empty()) file_kv = fedafd::read_config_file(config_path);

    std::map<std::string, std::string> overrides;
    if (o_mode->count()) overrides["mode"] = mode;
    if (o_arch->count()) overrides["arch"] = arch;
    if (o_part->count()) overrides["partition"] = partition;
    if (o_fdr->count()) overrides["fdr"] = std::to_string(fdr);
    if (o_frac->count()) overrides["fraction"] = std::to_string(fraction);
    if (o_rounds->count()) overrides["rounds"] = std::to_string(rounds);
    if (o_lr->count()) overrides["lr"] = std::to_string(lr);
    if (o_epochs->count()) overrides["epochs"] = std::to_string(epochs);
    if (o_batch->count()) overrides["batch_size"] = std::to_string(batch_size);
    if (o_clients->count()) overrides["clients"] = std::to_string(clients);
    if (o_eval->count()) overrides["eval_every"] = std::to_string(eval_every);
    if (o_sep->count()) overrides["separation"] = std::to_string(separation);
    if (o_target->count()) {
      overrides["target_accuracy"] = std::to_string(target);
    }
    if (o_seed->count()) overrides["seed"] = std::to_string(seed);
    if (o_q8->count()) overrides["quant8_down"] = "true";
    if (o_dgc->count()) overrides["dgc_up"] = "true";
    if (o_ratio->count()) overrides["dgc_ratio"] = std::to_string(dgc_ratio);
    if (o_clip->count()) overrides["dgc_clip"] = std::to_string(dgc_clip);
    if (o_out->count()) overrides["out"] = out_dir;
    if (!load_dataset_path.empty()) overrides["dataset_file"] = load_dataset_path;

    fedafd::ExperimentConfig config =
        fedafd::parse_config(file_kv, overrides);
    for (const std::string& w : config.warnings()) {
      std::cerr << "warning: " << w << "\n";
    }

    if (!save_dataset_path.empty()) {
      fedafd::Rng data_rng(fedafd::derive_seed(config.seed, "data"));
      fedafd::SynthConfig sc;
      sc.n_clients = config.clients;
      sc.n_per_client = config.per_client;
      sc.n_classes = config.classes;
      sc.dim = config.dim;
      sc.mode = config.partition_mode();
      sc.separation = config.separation;
      fedafd::save_dataset(fedafd::synthesize(sc, data_rng),
                           save_dataset_path);
      std::cout << "wrote " << save_dataset_path << "\n";
      return 0;
    }

    std::vector<std::uint64_t> seeds =
        seeds_arg.empty() ? std::vector<std::uint64_t>{config.seed}
                          : parse_seed_list(seeds_arg);

    const int threads = fedafd::resolve_threads(parallel);
    fs::create_directories(config.out_dir);
    std::vector<fedafd::SeedOutcome> outcomes =
        fedafd::run_seeds(config, seeds, threads, config.out_dir);

    if (controller_log) {
      const fs::path log_path = fs::path(config.out_dir) / "controller.csv";
      std::ofstream log(log_path);
      if (!log) throw std::runtime_error("cannot write " + log_path.string());
      log << "seed,round,client,spec_hash,recorded,loss\n";
      for (const auto& o : outcomes) {
        for (const auto& row : o.controller_log) {
          char buf[160];
          std::snprintf(buf, sizeof(buf), "%llu,%d,%d,%016llx,%d,%.9g\n",
                        static_cast<unsigned long long>(o.seed), row.round,
                        row.client,
                        static_cast<unsigned long long>(row.spec_hash),
                        row.recorded ? 1 : 0, row.loss);
          log << buf;
        }
      }
    }

    nlohmann::json baseline;
    const nlohmann::json* baseline_ptr = nullptr;
    if (!baseline_summary.empty()) {
      std::ifstream bf(baseline_summary);
      if (!bf) {
        throw std::runtime_error("cannot open baseline summary " +
                                 baseline_summary);
      }
      bf >> baseline;
      baseline_ptr = &baseline;
    }
    nlohmann::json summary =
        fedafd::summarize(config, outcomes, baseline_ptr);
    const fs::path summary_path = fs::path(config.out_dir) / "summary.json";
    std::ofstream sf(summary_path);
    if (!sf) throw std::runtime_error("cannot write " + summary_path.string());
    sf << summary.dump(2) << "\n";

    std::cout << "final accuracy mean: "
              << summary["final_accuracy"]["mean"].get<double>() << "\n";
    if (!summary["convergence_minutes"]["mean"].is_null()) {
      std::cout << "convergence minutes mean: "
                << summary["convergence_minutes"]["mean"].get<double>()
                << "\n";
    } else {
      std::cout << "target accuracy never reached\n";
    }
    if (summary.contains("speedup_ratio") &&
        !summary["speedup_ratio"].is_null()) {
      std::cout << "speedup vs baseline: "
                << summary["speedup_ratio"].get<double>() << "x\n";
    }
    std::cout << "outputs in " << config.out_dir << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
