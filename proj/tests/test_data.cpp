#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>

#include "fedafd/data.hpp"

using namespace fedafd;

namespace {

SynthConfig base_config() {
  SynthConfig c;
  c.n_clients = 4;
  c.n_per_client = 100;
  c.n_classes = 4;
  c.dim = 8;
  c.mode = PartitionMode::IID;
  c.separation = 3.0;
  return c;
}

}  // namespace

TEST_CASE("iid label counts stay within multinomial bounds") {
  SynthConfig c = base_config();
  Rng rng(1);
  FederatedDataset ds = synthesize(c, rng);
  REQUIRE(ds.clients.size() == 4);
  for (const auto& client : ds.clients) {
    std::vector<int> counts(c.n_classes, 0);
    for (int l : client.train.labels) ++counts[l];
    for (int l : client.test.labels) ++counts[l];
    const double p = 1.0 / c.n_classes;
    const double sigma = std::sqrt(p * (1 - p) * c.n_per_client);
    for (int k = 0; k < c.n_classes; ++k) {
      CHECK(std::fabs(counts[k] - p * c.n_per_client) <= 3.0 * sigma);
    }
  }
}

TEST_CASE("non-iid clients carry at most two classes") {
  SynthConfig c = base_config();
  c.mode = PartitionMode::NonIID;
  c.n_clients = 20;
  c.n_classes = 10;
  Rng rng(2);
  FederatedDataset ds = synthesize(c, rng);
  for (const auto& client : ds.clients) {
    std::set<int> labels(client.train.labels.begin(),
                         client.train.labels.end());
    labels.insert(client.test.labels.begin(), client.test.labels.end());
    CHECK(labels.size() <= 2);
  }
  CHECK(average_pairwise_label_tv(ds) >= 0.5);
}

TEST_CASE("80/20 split: 100 examples become 80 train and 20 test") {
  SynthConfig c = base_config();
  Rng rng(3);
  FederatedDataset ds = synthesize(c, rng);
  for (const auto& client : ds.clients) {
    CHECK(client.train.size() == 80);
    CHECK(client.test.size() == 20);
  }
  CHECK(ds.pooled_test().size() == 80);
  CHECK(ds.pooled_train().size() == 320);
}

TEST_CASE("generation is bitwise deterministic in the seed") {
  SynthConfig c = base_config();
  Rng a(42), b(42), other(43);
  FederatedDataset d1 = synthesize(c, a);
  FederatedDataset d2 = synthesize(c, b);
  FederatedDataset d3 = synthesize(c, other);
  for (std::size_t i = 0; i < d1.clients.size(); ++i) {
    CHECK(d1.clients[i].train.inputs.values ==
          d2.clients[i].train.inputs.values);
    CHECK(d1.clients[i].train.labels == d2.clients[i].train.labels);
  }
  CHECK(d1.clients[0].train.inputs.values !=
        d3.clients[0].train.inputs.values);
}

TEST_CASE("invalid configurations are rejected") {
  SynthConfig c = base_config();
  c.n_clients = 0;
  Rng rng(4);
  CHECK_THROWS_AS(synthesize(c, rng), std::invalid_argument);

  SynthConfig one_class = base_config();
  one_class.n_classes = 1;
  one_class.mode = PartitionMode::NonIID;
  CHECK_THROWS_AS(synthesize(one_class, rng), std::invalid_argument);
}

TEST_CASE("dataset export/import round-trips bitwise") {
  SynthConfig c = base_config();
  c.mode = PartitionMode::NonIID;
  c.n_classes = 8;
  c.n_clients = 10;
  Rng rng(5);
  FederatedDataset ds = synthesize(c, rng);

  const std::string path = "test_dataset_roundtrip.bin";
  save_dataset(ds, path);
  FederatedDataset back = load_dataset(path);
  std::remove(path.c_str());

  CHECK(back.num_classes == ds.num_classes);
  CHECK(back.feature_dim == ds.feature_dim);
  CHECK(back.seed == ds.seed);
  CHECK((back.mode == ds.mode));
  REQUIRE(back.clients.size() == ds.clients.size());
  for (std::size_t i = 0; i < ds.clients.size(); ++i) {
    CHECK(back.clients[i].train.inputs.values ==
          ds.clients[i].train.inputs.values);
    CHECK(back.clients[i].train.labels == ds.clients[i].train.labels);
    CHECK(back.clients[i].test.inputs.values ==
          ds.clients[i].test.inputs.values);
    CHECK(back.clients[i].test.labels == ds.clients[i].test.labels);
  }
}

TEST_CASE("a central MLP separates the pooled IID data") {
  SynthConfig c = base_config();
  c.dim = 32;
  c.n_classes = 4;
  c.n_clients = 4;
  c.n_per_client = 200;
  Rng rng(6);
  FederatedDataset ds = synthesize(c, rng);

  Architecture arch = make_mlp(32, {64}, c.n_classes);
  Rng init(7);
  ModelParams params = init_params(arch, init);
  Batch train = ds.pooled_train();
  Batch test = ds.pooled_test();

  Rng train_rng(8);
  TrainResult r = local_train(arch, params, train, 50, 32, 0.1, train_rng);
  const double acc = evaluate(arch, r.params, test).accuracy;
  CHECK(acc >= 0.90);
}
