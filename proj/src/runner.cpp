#include "fedafd/runner.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

namespace fedafd {

std::vector<SeedOutcome> run_seeds(const ExperimentConfig& base,
                                   const std::vector<std::uint64_t>& seeds,
                                   int max_threads,
                                   const std::string& csv_dir) {
  std::vector<SeedOutcome> out(seeds.size());
  auto run_one = [&](std::size_t i) {
    ExperimentConfig config = base;
    config.seed = seeds[i];
    Experiment exp(config);

    std::ofstream csv;
    if (!csv_dir.empty()) {
      const std::string name =
          seeds.size() == 1
              ? "metrics.csv"
              : "metrics_seed" + std::to_string(seeds[i]) + ".csv";
      const auto path = std::filesystem::path(csv_dir) / name;
      csv.open(path);
      if (!csv) throw std::runtime_error("cannot write " + path.string());
      csv << kMetricsCsvHeader;
      csv.flush();
    }
    MetricsTable table = exp.run([&](const EvalRow& row) {
      if (csv.is_open()) {
        csv << eval_row_csv(row);
        csv.flush();  // partial results survive an aborted run
      }
    });

    SeedOutcome& o = out[i];
    o.seed = seeds[i];
    o.controller_log = exp.controller_log();
    o.final_accuracy = table.final_accuracy();
    o.convergence_min = table.convergence_min(config.target_accuracy);
    o.cum_down_bytes = table.rows.back().cum_down_bytes;
    o.cum_up_bytes = table.rows.back().cum_up_bytes;
    o.metrics = std::move(table);
  };

  const int threads =
      std::min<int>(std::max(1, max_threads), static_cast<int>(seeds.size()));
  if (threads <= 1) {
    for (std::size_t i = 0; i < seeds.size(); ++i) run_one(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= seeds.size()) return;
        try {
          run_one(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

double sample_std(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const double mean =
      std::accumulate(values.begin(), values.end(), 0.0) /
      static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return std::sqrt(sq / static_cast<double>(values.size() - 1));
}

nlohmann::json summarize(const ExperimentConfig& config,
                         const std::vector<SeedOutcome>& outcomes,
                         const nlohmann::json* baseline) {
  std::vector<double> accs;
  nlohmann::json per_seed_acc = nlohmann::json::array();
  nlohmann::json per_seed_conv = nlohmann::json::array();
  nlohmann::json seed_list = nlohmann::json::array();
  std::vector<double> conv_reached;
  std::uint64_t down_sum = 0, up_sum = 0;
  for (const auto& o : outcomes) {
    accs.push_back(o.final_accuracy);
    per_seed_acc.push_back(o.final_accuracy);
    seed_list.push_back(o.seed);
    if (o.convergence_min) {
      per_seed_conv.push_back(*o.convergence_min);
      conv_reached.push_back(*o.convergence_min);
    } else {
      per_seed_conv.push_back(nullptr);
    }
    down_sum += o.cum_down_bytes;
    up_sum += o.cum_up_bytes;
  }
  const double acc_mean =
      std::accumulate(accs.begin(), accs.end(), 0.0) /
      static_cast<double>(accs.empty() ? 1 : accs.size());

  nlohmann::json j;
  j["mode"] = config.mode;
  j["fdr"] = config.fdr;
  j["target_accuracy"] = config.target_accuracy;
  j["rounds"] = config.rounds;
  j["seeds"] = seed_list;
  j["final_accuracy"] = {{"mean", acc_mean},
                         {"std", sample_std(accs)},
                         {"per_seed", per_seed_acc}};
  nlohmann::json conv;
  conv["per_seed"] = per_seed_conv;
  conv["reached"] = conv_reached.size();
  if (!conv_reached.empty()) {
    conv["mean"] = std::accumulate(conv_reached.begin(), conv_reached.end(),
                                   0.0) /
                   static_cast<double>(conv_reached.size());
  } else {
    conv["mean"] = nullptr;
  }
  j["convergence_minutes"] = conv;
  j["bytes"] = {
      {"down_mean",
       static_cast<double>(down_sum) /
           static_cast<double>(outcomes.empty() ? 1 : outcomes.size())},
      {"up_mean", static_cast<double>(up_sum) /
                      static_cast<double>(outcomes.empty() ? 1 : outcomes.size())}};

  if (baseline != nullptr) {
    const auto& b = *baseline;
    if (b.contains("convergence_minutes") &&
        !b["convergence_minutes"]["mean"].is_null() &&
        !conv["mean"].is_null()) {
      j["speedup_ratio"] =
          speedup_ratio(b["convergence_minutes"]["mean"].get<double>(),
                        conv["mean"].get<double>());
    } else {
      j["speedup_ratio"] = nullptr;
    }
    if (b.contains("final_accuracy")) {
      j["baseline_final_accuracy_mean"] = b["final_accuracy"]["mean"];
    }
  }
  return j;
}

int resolve_threads(bool parallel_requested) {
  if (!parallel_requested) return 1;
  int threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;
  if (const char* cap = std::getenv("FEDAFD_THREADS")) {
    try {
      const int c = std::stoi(cap);
      if (c >= 1) threads = std::min(threads, c);
    } catch (const std::exception&) {
      // ignore unparsable cap
    }
  }
  return threads;
}

}  // namespace fedafd
