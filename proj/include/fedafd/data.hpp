#pragma once

// Synthetic federated dataset: class-conditional unit-variance Gaussian
// clusters, dealt to clients either IID (labels from the global uniform
// distribution) or non-IID (two classes per client, shard-style label skew),
// with a per-client 80/20 train/test split.

#include <cstdint>
#include <string>
#include <vector>

#include "fedafd/model.hpp"
#include "fedafd/rng.hpp"

namespace fedafd {

enum class PartitionMode { IID, NonIID };

struct ClientShard {
  Batch train;
  Batch test;
};

struct FederatedDataset {
  std::vector<ClientShard> clients;
  int num_classes = 0;
  int feature_dim = 0;
  PartitionMode mode = PartitionMode::IID;
  std::uint64_t seed = 0;

  Batch pooled_test() const;
  Batch pooled_train() const;
};

struct SynthConfig {
  int n_clients = 0;
  int n_per_client = 0;
  int n_classes = 0;
  int dim = 0;
  PartitionMode mode = PartitionMode::IID;
  // Class means sit at separation * (orthonormal directions); pairwise mean
  // distance is separation * sqrt(2) against unit-variance noise.
  double separation = 3.0;
};

// Deterministic in the rng seed. Throws on invalid counts, and for non-IID
// data whose generated label skew is too mild (average pairwise total
// variation distance below 0.5).
FederatedDataset synthesize(const SynthConfig& config, Rng& rng);

// Average pairwise total-variation distance between client train-label
// distributions.
double average_pairwise_label_tv(const FederatedDataset& ds);

// Binary snapshot for run-to-run reuse. Layout (little-endian): magic
// "FADS", u32 version, u64 seed, u32 mode, u32 classes, u32 dim,
// u32 n_clients, then per client and split: u32 count, count*dim f64
// inputs, count i32 labels.
void save_dataset(const FederatedDataset& ds, const std::string& path);
FederatedDataset load_dataset(const std::string& path);

}  // namespace fedafd
