#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "fedafd/federation.hpp"

using namespace fedafd;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.clients = 3;
  cfg.per_client = 20;
  cfg.classes = 3;
  cfg.dim = 6;
  cfg.hidden = {8};
  cfg.partition = "iid";
  cfg.mode = "none";
  cfg.rounds = 1;
  cfg.fraction = 1.0;
  cfg.lr = 0.05;
  cfg.epochs = 1;
  cfg.batch_size = 100;  // one full batch per epoch
  cfg.eval_every = 1;
  cfg.seed = 11;
  return cfg;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].weights.values != b.layers[i].weights.values) return false;
    if (a.layers[i].biases.values != b.layers[i].biases.values) return false;
  }
  return true;
}

ModelParams one_tensor_params(std::vector<double> w) {
  const std::size_t n = w.size();
  ModelParams p;
  p.layers.push_back({Tensor({n}, std::move(w)), Tensor({1})});
  return p;
}

}  // namespace

TEST_CASE("select_clients: counts, distinctness and uniform frequency") {
  Rng rng(1);
  CHECK(select_clients(7, 1.0, rng) == std::vector<int>{0, 1, 2, 3, 4, 5, 6});

  auto three = select_clients(10, 0.3, rng);
  CHECK(three.size() == 3);
  CHECK(std::set<int>(three.begin(), three.end()).size() == 3);

  const int draws = 10000;
  std::vector<int> counts(10, 0);
  for (int i = 0; i < draws; ++i) {
    for (int c : select_clients(10, 0.3, rng)) ++counts[c];
  }
  const double sigma = std::sqrt(0.3 * 0.7 / draws);
  for (int c : counts) {
    CHECK(std::fabs(static_cast<double>(c) / draws - 0.3) <= 3.0 * sigma);
  }

  CHECK(select_clients(5, 0.01, rng).size() == 1);  // max(1, ...)
  CHECK_THROWS_AS(select_clients(5, 0.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(select_clients(5, 1.5, rng), std::invalid_argument);
}

TEST_CASE("aggregate: weighted mean arithmetic") {
  std::vector<ClientUpdate> updates;
  updates.push_back({0, one_tensor_params({0, 4}), 1});
  updates.push_back({1, one_tensor_params({4, 8}), 3});
  ModelParams mean = aggregate(updates);
  CHECK(mean.layers[0].weights.values == std::vector<double>{3, 7});

  // Weights sum to one.
  double n_t = 0;
  for (const auto& u : updates) n_t += static_cast<double>(u.n_examples);
  double wsum = 0;
  for (const auto& u : updates) wsum += static_cast<double>(u.n_examples) / n_t;
  CHECK(std::fabs(wsum - 1.0) <= 1e-12);

  // Single client: bitwise identity.
  std::vector<ClientUpdate> solo;
  solo.push_back({0, one_tensor_params({1.37, -2.2}), 5});
  CHECK(params_equal(aggregate(solo), solo[0].params));

  // Identical params: convexity fixed point.
  std::vector<ClientUpdate> same;
  for (int c = 0; c < 3; ++c) {
    same.push_back({c, one_tensor_params({0.5, -1.5}), c + 1});
  }
  ModelParams fixed = aggregate(same);
  CHECK(fixed.layers[0].weights.values[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(fixed.layers[0].weights.values[1] == doctest::Approx(-1.5).epsilon(1e-14));

  CHECK_THROWS_AS(aggregate({}), std::invalid_argument);
  std::vector<ClientUpdate> bad;
  bad.push_back({0, one_tensor_params({1, 2}), 1});
  bad.push_back({1, one_tensor_params({1, 2, 3}), 1});
  CHECK_THROWS_AS(aggregate(bad), std::invalid_argument);
}

TEST_CASE("aggregate is bitwise permutation-invariant in client order") {
  Rng rng(3);
  std::vector<ClientUpdate> updates;
  for (int c = 0; c < 5; ++c) {
    std::vector<double> w(7);
    for (double& v : w) v = rng.next_normal();
    updates.push_back({c, one_tensor_params(std::move(w)),
                       static_cast<std::int64_t>(1 + rng.next_below(50))});
  }
  ModelParams a = aggregate(updates);

  std::vector<ClientUpdate> shuffled = {updates[3], updates[0], updates[4],
                                        updates[1], updates[2]};
  CHECK(params_equal(aggregate(shuffled), a));

  ModelParams base = one_tensor_params({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7});
  CHECK(params_equal(aggregate_around(base, shuffled),
                     aggregate_around(base, updates)));
}

TEST_CASE("degenerate round: one client, no codecs, reduces to local_train") {
  ExperimentConfig cfg = tiny_config();
  cfg.clients = 1;
  cfg.seed = 21;
  Experiment exp(cfg);
  ModelParams before = exp.global();

  exp.run_round(1);

  Rng train_rng(derive_seed(cfg.seed, "train", 1, 0));
  TrainResult expect =
      local_train(exp.arch(), before, exp.dataset().clients[0].train,
                  cfg.epochs, cfg.batch_size, cfg.lr, train_rng);
  CHECK(params_equal(exp.global(), expect.params));
}

TEST_CASE("one-step FedAvg equals the weighted-gradient closed form") {
  ExperimentConfig cfg = tiny_config();
  cfg.seed = 31;
  Experiment exp(cfg);
  ModelParams before = exp.global();

  // Closed form: W - lr * (1/n_t) * sum(n_c * H_c) with H_c the full-shard
  // gradient at W.
  double n_t = 0;
  for (const auto& c : exp.dataset().clients) {
    n_t += static_cast<double>(c.train.size());
  }
  ModelParams expect = before;
  for (const auto& client : exp.dataset().clients) {
    auto lg = loss_and_grad(exp.arch(), before, client.train);
    const double w = static_cast<double>(client.train.size()) / n_t;
    for (std::size_t l = 0; l < expect.layers.size(); ++l) {
      for (std::size_t k = 0; k < expect.layers[l].weights.values.size(); ++k) {
        expect.layers[l].weights.values[k] -=
            cfg.lr * w * lg.grads.layers[l].weights.values[k];
      }
      for (std::size_t k = 0; k < expect.layers[l].biases.values.size(); ++k) {
        expect.layers[l].biases.values[k] -=
            cfg.lr * w * lg.grads.layers[l].biases.values[k];
      }
    }
  }

  exp.run_round(1);
  for (std::size_t l = 0; l < expect.layers.size(); ++l) {
    for (std::size_t k = 0; k < expect.layers[l].weights.values.size(); ++k) {
      CHECK(std::fabs(exp.global().layers[l].weights.values[k] -
                      expect.layers[l].weights.values[k]) <= 1e-9);
    }
    for (std::size_t k = 0; k < expect.layers[l].biases.values.size(); ++k) {
      CHECK(std::fabs(exp.global().layers[l].biases.values[k] -
                      expect.layers[l].biases.values[k]) <= 1e-9);
    }
  }
}

TEST_CASE("coordinates dropped by every client stay bitwise unchanged") {
  ExperimentConfig cfg = tiny_config();
  cfg.clients = 2;
  cfg.mode = "fd";
  cfg.fdr = 0.5;
  cfg.seed = 41;
  Experiment exp(cfg);
  const Architecture& arch = exp.arch();
  ModelParams before = exp.global();

  // Recompute the specs the round will draw.
  std::vector<SubModelSpec> specs;
  for (int c = 0; c < cfg.clients; ++c) {
    Rng plan_rng(derive_seed(cfg.seed, "plan", 1, c));
    specs.push_back(select_random(arch, cfg.fdr, plan_rng));
  }
  std::set<int> kept_union;
  for (const auto& s : specs) {
    for (int u : s.kept.at(0)) kept_union.insert(u);
  }
  REQUIRE(kept_union.size() < 8);  // otherwise the draw covered all units

  exp.run_round(1);

  const std::size_t fin = 6;
  for (int u = 0; u < 8; ++u) {
    if (kept_union.count(u)) continue;
    // Dropped by everyone: its W1 row, bias and W2 column are untouched.
    for (std::size_t k = 0; k < fin; ++k) {
      CHECK(exp.global().layers[0].weights.values[u * fin + k] ==
            before.layers[0].weights.values[u * fin + k]);
    }
    CHECK(exp.global().layers[0].biases.values[u] ==
          before.layers[0].biases.values[u]);
    for (std::size_t r = 0; r < 3; ++r) {
      CHECK(exp.global().layers[1].weights.values[r * 8 + u] ==
            before.layers[1].weights.values[r * 8 + u]);
    }
  }
}

TEST_CASE("fixed dropout always shrinks the downlink") {
  ExperimentConfig none_cfg = tiny_config();
  none_cfg.seed = 51;
  ExperimentConfig fd_cfg = none_cfg;
  fd_cfg.mode = "fd";
  fd_cfg.fdr = 0.25;

  Experiment none_exp(none_cfg);
  Experiment fd_exp(fd_cfg);
  RoundMetrics none_rm = none_exp.run_round(1);
  RoundMetrics fd_rm = fd_exp.run_round(1);
  CHECK(fd_rm.down_bytes < none_rm.down_bytes);
}

TEST_CASE("downlink byte accounting matches the per-tensor formulas") {
  ExperimentConfig cfg;
  cfg.clients = 4;
  cfg.per_client = 20;
  cfg.classes = 10;
  cfg.dim = 32;
  cfg.hidden = {64};
  cfg.partition = "iid";
  cfg.mode = "fd";
  cfg.fdr = 0.25;
  cfg.quant8_down = true;
  cfg.rounds = 1;
  cfg.fraction = 1.0;
  cfg.eval_every = 1;
  cfg.seed = 61;

  Experiment exp(cfg);
  CHECK(exp.global().parameter_count() == 2762);
  RoundMetrics rm = exp.run_round(1);

  // Kept 48 of 64 hidden units: quantized weights (padded + 16 bytes of
  // range meta) plus raw biases.
  const std::uint64_t w1 = 2048 + 16;  // 48*32 = 1536 -> padded 2048
  const std::uint64_t b1 = 48 * 8;
  const std::uint64_t w2 = 512 + 16;  // 10*48 = 480 -> padded 512
  const std::uint64_t b2 = 10 * 8;
  const std::uint64_t per_client = w1 + b1 + w2 + b2;
  CHECK(per_client == 3056);
  CHECK(rm.down_bytes == 4 * per_client);

  // >= 4x downlink reduction against the uncompressed full model.
  const std::uint64_t baseline_per_client = 2762 * 8;
  CHECK(static_cast<double>(baseline_per_client) / per_client >= 4.0);
}

TEST_CASE("trained_only aggregation: single client equals plain lift") {
  ExperimentConfig cfg = tiny_config();
  cfg.clients = 1;
  cfg.mode = "fd";
  cfg.fdr = 0.5;
  cfg.seed = 71;

  ExperimentConfig alt = cfg;
  alt.aggregate = "trained_only";

  Experiment a(cfg), b(alt);
  a.run_round(1);
  b.run_round(1);
  CHECK(params_equal(a.global(), b.global()));
}

TEST_CASE("trained_only aggregation: per-coordinate means over the trainers") {
  ExperimentConfig cfg = tiny_config();
  cfg.clients = 3;
  cfg.mode = "fd";
  cfg.fdr = 0.5;
  cfg.aggregate = "trained_only";
  cfg.seed = 73;

  Experiment exp(cfg);
  const Architecture& arch = exp.arch();
  ModelParams before = exp.global();

  // Replicate each client's pipeline (no codecs: the reconstructed update
  // is exactly the trained sub-model lifted to global shape).
  ModelParams zeros = before;
  for (auto& l : zeros.layers) {
    std::fill(l.weights.values.begin(), l.weights.values.end(), 0.0);
    std::fill(l.biases.values.begin(), l.biases.values.end(), 0.0);
  }
  ModelParams sums = zeros;
  ModelParams wsums = zeros;
  for (int c = 0; c < cfg.clients; ++c) {
    Rng plan_rng(derive_seed(cfg.seed, "plan", 1, c));
    SubModelSpec spec = select_random(arch, cfg.fdr, plan_rng);
    ExtractResult sub = extract(before, arch, spec);
    Rng train_rng(derive_seed(cfg.seed, "train", 1, c));
    TrainResult trained =
        local_train(sub.arch, sub.params, exp.dataset().clients[c].train,
                    cfg.epochs, cfg.batch_size, cfg.lr, train_rng);
    ModelParams lifted = lift(before, arch, spec, trained.params);

    ExtractResult flags = extract(zeros, arch, spec);
    for (auto& l : flags.params.layers) {
      std::fill(l.weights.values.begin(), l.weights.values.end(), 1.0);
      std::fill(l.biases.values.begin(), l.biases.values.end(), 1.0);
    }
    ModelParams mask = lift(zeros, arch, spec, flags.params);

    const double n_c =
        static_cast<double>(exp.dataset().clients[c].train.size());
    for (std::size_t l = 0; l < sums.layers.size(); ++l) {
      for (std::size_t k = 0; k < sums.layers[l].weights.values.size(); ++k) {
        sums.layers[l].weights.values[k] +=
            n_c * mask.layers[l].weights.values[k] *
            lifted.layers[l].weights.values[k];
        wsums.layers[l].weights.values[k] +=
            n_c * mask.layers[l].weights.values[k];
      }
      for (std::size_t k = 0; k < sums.layers[l].biases.values.size(); ++k) {
        sums.layers[l].biases.values[k] +=
            n_c * mask.layers[l].biases.values[k] *
            lifted.layers[l].biases.values[k];
        wsums.layers[l].biases.values[k] +=
            n_c * mask.layers[l].biases.values[k];
      }
    }
  }
  ModelParams expect = before;
  for (std::size_t l = 0; l < expect.layers.size(); ++l) {
    for (std::size_t k = 0; k < expect.layers[l].weights.values.size(); ++k) {
      if (wsums.layers[l].weights.values[k] > 0.0) {
        expect.layers[l].weights.values[k] =
            sums.layers[l].weights.values[k] /
            wsums.layers[l].weights.values[k];
      }
    }
    for (std::size_t k = 0; k < expect.layers[l].biases.values.size(); ++k) {
      if (wsums.layers[l].biases.values[k] > 0.0) {
        expect.layers[l].biases.values[k] =
            sums.layers[l].biases.values[k] / wsums.layers[l].biases.values[k];
      }
    }
  }

  exp.run_round(1);
  CHECK(params_equal(exp.global(), expect));
}

TEST_CASE("fixed rates and raw codecs give the closed-form round time") {
  ExperimentConfig cfg = tiny_config();
  cfg.net.sampling = NetworkModel::Sampling::PerExperiment;
  cfg.net.compute_seconds_per_round = 0.25;
  Experiment exp(cfg);

  Rng net_rng(derive_seed(cfg.seed, "net"));
  LinkRates rates = sample_rates(cfg.net, net_rng);
  const std::uint64_t model_bytes = exp.global().parameter_count() * 8;
  const double expect = transfer_seconds(model_bytes, rates.down_mbps) +
                        transfer_seconds(model_bytes, rates.up_mbps) + 0.25;

  RoundMetrics r1 = exp.run_round(1);
  CHECK(r1.round_seconds == doctest::Approx(expect).epsilon(1e-12));
  // Per-experiment sampling reuses the same rates every round.
  RoundMetrics r2 = exp.run_round(2);
  CHECK(r2.round_seconds == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("afd modes fill the controller decision log") {
  ExperimentConfig cfg = tiny_config();
  cfg.mode = "afd_multi";
  cfg.fdr = 0.25;
  cfg.rounds = 2;
  Experiment exp(cfg);
  exp.run();
  REQUIRE(exp.controller_log().size() == 6);  // 3 clients x 2 rounds
  for (const auto& row : exp.controller_log()) {
    CHECK(row.client >= 0);
    CHECK(row.loss >= 0.0);
    CHECK(row.spec_hash != 0);
  }

  ExperimentConfig single = tiny_config();
  single.mode = "afd_single";
  single.fdr = 0.25;
  single.rounds = 2;
  Experiment sexp(single);
  sexp.run();
  REQUIRE(sexp.controller_log().size() == 2);  // one shared decision per round
  CHECK(sexp.controller_log()[0].client == -1);
}

TEST_CASE("run_experiment: zero rounds yields only the initial row") {
  ExperimentConfig cfg = tiny_config();
  cfg.rounds = 0;
  MetricsTable table = run_experiment(cfg);
  REQUIRE(table.rows.size() == 1);
  CHECK(table.rows[0].round == 0);
  CHECK(table.rows[0].cum_down_bytes == 0);
}

TEST_CASE("run_experiment: metrics CSV is byte-identical across reruns") {
  ExperimentConfig cfg = tiny_config();
  cfg.rounds = 4;
  cfg.mode = "afd_multi";
  cfg.fdr = 0.25;
  cfg.quant8_down = true;
  cfg.dgc_up = true;
  cfg.eval_every = 2;
  cfg.seed = 81;

  const std::string csv1 = run_experiment(cfg).to_csv();
  const std::string csv2 = run_experiment(cfg).to_csv();
  CHECK(csv1 == csv2);
  CHECK(csv1.rfind("round,cum_seconds,cum_down_bytes,cum_up_bytes,"
                   "train_loss,test_accuracy\n",
                   0) == 0);

  ExperimentConfig other = cfg;
  other.seed = 82;
  CHECK(run_experiment(other).to_csv() != csv1);
}

TEST_CASE("every dropout mode runs end to end with both codecs") {
  for (const std::string mode : {"none", "fd", "afd_multi", "afd_single"}) {
    ExperimentConfig cfg = tiny_config();
    cfg.clients = 5;
    cfg.fraction = 0.6;
    cfg.rounds = 3;
    cfg.mode = mode;
    cfg.quant8_down = true;
    cfg.dgc_up = true;
    cfg.dgc_ratio = 0.5;
    cfg.seed = 91;
    MetricsTable table = run_experiment(cfg);
    CHECK(table.rows.size() == 4);  // round 0 + three evals
    for (const auto& row : table.rows) {
      CHECK(std::isfinite(row.train_loss));
      CHECK(row.test_accuracy >= 0.0);
      CHECK(row.test_accuracy <= 1.0);
    }
    // The simulated clock only moves forward.
    for (std::size_t i = 1; i < table.rows.size(); ++i) {
      CHECK(table.rows[i].cum_seconds >= table.rows[i - 1].cum_seconds);
      CHECK(table.rows[i].cum_down_bytes >= table.rows[i - 1].cum_down_bytes);
    }
  }
}
