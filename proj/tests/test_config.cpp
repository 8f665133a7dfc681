#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "fedafd/config.hpp"
#include "fedafd/runner.hpp"

using namespace fedafd;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content)
      : path(name) {
    std::ofstream f(path);
    f << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("empty config falls back to the documented defaults") {
  ExperimentConfig c = parse_config({}, {});
  CHECK(c.mode == "none");
  CHECK(c.fdr == 0.25);
  CHECK(c.fraction == 0.3);
  CHECK(c.lr == 0.05);
  CHECK(c.epochs == 1);
  CHECK(c.batch_size == 10);
  CHECK(c.net.down_mbps_lo == 5.0);
  CHECK(c.net.down_mbps_hi == 12.0);
  CHECK(c.net.up_mbps_lo == 2.0);
  CHECK(c.net.up_mbps_hi == 5.0);
}

TEST_CASE("invalid values are rejected with the field name") {
  CHECK_THROWS_WITH_AS(parse_config({{"fdr", "1.0"}}, {}),
                       doctest::Contains("fdr"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config({{"fraction", "0"}}, {}),
                       doctest::Contains("fraction"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config({{"rounds", "-1"}}, {}),
                       doctest::Contains("rounds"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config({{"rounds", "ten"}}, {}),
                       doctest::Contains("rounds"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config({{"bogus_key", "1"}}, {}),
                       doctest::Contains("bogus_key"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config({{"mode", "dropout"}}, {}),
                       doctest::Contains("mode"), std::invalid_argument);
}

TEST_CASE("out-of-band fdr is accepted with a guidance warning") {
  ExperimentConfig c = parse_config({{"fdr", "0.6"}, {"mode", "fd"}}, {});
  CHECK(c.fdr == 0.6);
  auto warnings = c.warnings();
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("10%-50%") != std::string::npos);

  ExperimentConfig ok = parse_config({{"fdr", "0.25"}, {"mode", "fd"}}, {});
  CHECK(ok.warnings().empty());
}

TEST_CASE("single-model dropout on non-IID shards warns") {
  ExperimentConfig c =
      parse_config({{"mode", "afd_single"}, {"partition", "noniid"}}, {});
  bool found = false;
  for (const auto& w : c.warnings()) {
    if (w.find("non-IID") != std::string::npos) found = true;
  }
  CHECK(found);
  // And the mode-specific client fraction default applies when unset.
  CHECK(c.fraction == 0.1);
  ExperimentConfig explicit_frac =
      parse_config({{"mode", "afd_single"}, {"fraction", "0.4"}}, {});
  CHECK(explicit_frac.fraction == 0.4);
}

TEST_CASE("key=value files parse with comments and overrides win") {
  TempFile f("test_cfg.txt",
             "# comment\n"
             "mode = fd\n"
             "fdr = 0.3   # trailing comment\n"
             "rounds = 7\n");
  auto kv = read_config_file(f.path);
  ExperimentConfig c = parse_config(kv, {{"fdr", "0.2"}});
  CHECK(c.mode == "fd");
  CHECK(c.fdr == 0.2);  // flag overrides file
  CHECK(c.rounds == 7);
}

TEST_CASE("JSON config files parse types and reject unknown keys") {
  TempFile f("test_cfg.json",
             R"({"mode": "afd_multi", "fdr": 0.25, "quant8_down": true,
                 "rounds": 12, "hidden": "32,16"})");
  auto kv = read_config_file(f.path);
  ExperimentConfig c = parse_config(kv, {});
  CHECK(c.mode == "afd_multi");
  CHECK(c.quant8_down);
  CHECK(c.rounds == 12);
  CHECK(c.hidden == std::vector<int>{32, 16});

  TempFile bad("test_bad.json", R"({"moed": "fd"})");
  auto bad_kv = read_config_file(bad.path);
  CHECK_THROWS_WITH_AS(parse_config(bad_kv, {}), doctest::Contains("moed"),
                       std::invalid_argument);
}

TEST_CASE("multi-seed runs aggregate mean and sample std") {
  ExperimentConfig cfg;
  cfg.clients = 3;
  cfg.per_client = 20;
  cfg.classes = 3;
  cfg.dim = 6;
  cfg.hidden = {8};
  cfg.partition = "iid";
  cfg.rounds = 2;
  cfg.fraction = 1.0;
  cfg.eval_every = 1;
  cfg.target_accuracy = 0.01;  // reached at the first evaluation

  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  auto outcomes = run_seeds(cfg, seeds, 1);
  REQUIRE(outcomes.size() == 5);

  nlohmann::json summary = summarize(cfg, outcomes, nullptr);
  CHECK(summary["seeds"].size() == 5);
  CHECK(summary["final_accuracy"]["per_seed"].size() == 5);

  std::vector<double> accs;
  for (const auto& o : outcomes) accs.push_back(o.final_accuracy);
  const double mean = (accs[0] + accs[1] + accs[2] + accs[3] + accs[4]) / 5.0;
  CHECK(summary["final_accuracy"]["mean"].get<double>() ==
        doctest::Approx(mean).epsilon(1e-12));
  CHECK(summary["final_accuracy"]["std"].get<double>() ==
        doctest::Approx(sample_std(accs)).epsilon(1e-12));
  CHECK(summary["convergence_minutes"]["reached"].get<int>() == 5);

  // Parallel execution produces the same outcomes.
  auto parallel = run_seeds(cfg, seeds, 4);
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    CHECK(parallel[i].metrics.to_csv() == outcomes[i].metrics.to_csv());
  }
}

TEST_CASE("baseline summary produces a speedup ratio") {
  nlohmann::json baseline;
  baseline["convergence_minutes"]["mean"] = 100.0;
  baseline["final_accuracy"]["mean"] = 0.9;

  SeedOutcome o;
  o.seed = 1;
  o.final_accuracy = 0.88;
  o.convergence_min = 25.0;
  o.metrics.rows.push_back({0, 0.0, 0, 0, 0.0, 0.88});

  ExperimentConfig cfg;
  nlohmann::json summary = summarize(cfg, {o}, &baseline);
  REQUIRE(summary.contains("speedup_ratio"));
  CHECK(summary["speedup_ratio"].get<double>() ==
        doctest::Approx(4.0).epsilon(1e-12));
}
