#include "fedafd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fedafd {

namespace {

Batch concat_batches(const std::vector<const Batch*>& parts, int dim) {
  std::size_t total = 0;
  for (const Batch* b : parts) total += b->size();
  Batch out;
  out.inputs = Tensor({total, static_cast<std::size_t>(dim)});
  out.labels.reserve(total);
  std::size_t off = 0;
  for (const Batch* b : parts) {
    std::copy(b->inputs.values.begin(), b->inputs.values.end(),
              out.inputs.values.begin() + off);
    off += b->inputs.values.size();
    out.labels.insert(out.labels.end(), b->labels.begin(), b->labels.end());
  }
  return out;
}

// Orthonormal class directions when dim >= classes (Gram-Schmidt over
// Gaussian draws), plain unit vectors otherwise.
std::vector<std::vector<double>> class_directions(int n_classes, int dim,
                                                  Rng& rng) {
  std::vector<std::vector<double>> dirs;
  dirs.reserve(n_classes);
  for (int c = 0; c < n_classes; ++c) {
    std::vector<double> v(dim);
    for (int attempt = 0; attempt < 64; ++attempt) {
      for (double& x : v) x = rng.next_normal();
      if (dim >= n_classes) {
        for (const auto& u : dirs) {
          double dot = 0.0;
          for (int i = 0; i < dim; ++i) dot += v[i] * u[i];
          for (int i = 0; i < dim; ++i) v[i] -= dot * u[i];
        }
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-6) {
        for (double& x : v) x /= norm;
        break;
      }
    }
    dirs.push_back(std::move(v));
  }
  return dirs;
}

}  // namespace

Batch FederatedDataset::pooled_test() const {
  std::vector<const Batch*> parts;
  for (const auto& c : clients) parts.push_back(&c.test);
  return concat_batches(parts, feature_dim);
}

Batch FederatedDataset::pooled_train() const {
  std::vector<const Batch*> parts;
  for (const auto& c : clients) parts.push_back(&c.train);
  return concat_batches(parts, feature_dim);
}

FederatedDataset synthesize(const SynthConfig& config, Rng& rng) {
  if (config.n_clients < 1 || config.n_per_client < 1 ||
      config.n_classes < 1 || config.dim < 1) {
    throw std::invalid_argument("synthesize: all counts must be positive");
  }
  if (config.mode == PartitionMode::NonIID && config.n_classes < 2) {
    throw std::invalid_argument("synthesize: non-IID needs >= 2 classes");
  }

  FederatedDataset ds;
  ds.num_classes = config.n_classes;
  ds.feature_dim = config.dim;
  ds.mode = config.mode;
  ds.seed = rng.seed();

  Rng means_rng = rng.child("means");
  auto dirs = class_directions(config.n_classes, config.dim, means_rng);

  ds.clients.resize(config.n_clients);
  for (int c = 0; c < config.n_clients; ++c) {
    Rng crng = rng.child("client", static_cast<std::uint64_t>(c));

    int class_a = 0, class_b = 0;
    if (config.mode == PartitionMode::NonIID) {
      class_a = static_cast<int>(crng.next_below(config.n_classes));
      class_b = static_cast<int>(crng.next_below(config.n_classes - 1));
      if (class_b >= class_a) ++class_b;
    }

    const int n = config.n_per_client;
    Tensor inputs({static_cast<std::size_t>(n),
                   static_cast<std::size_t>(config.dim)});
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      int label;
      if (config.mode == PartitionMode::IID) {
        label = static_cast<int>(crng.next_below(config.n_classes));
      } else {
        label = (crng.next_u64() & 1) ? class_b : class_a;
      }
      labels[i] = label;
      double* row = &inputs.values[static_cast<std::size_t>(i) * config.dim];
      const auto& mu = dirs[label];
      for (int d = 0; d < config.dim; ++d) {
        row[d] = config.separation * mu[d] + crng.next_normal();
      }
    }

    const int n_test = static_cast<int>(std::lround(0.2 * n));
    const int n_train = n - n_test;
    ClientShard shard;
    shard.train.inputs = Tensor({static_cast<std::size_t>(n_train),
                                 static_cast<std::size_t>(config.dim)});
    shard.test.inputs = Tensor({static_cast<std::size_t>(n_test),
                                static_cast<std::size_t>(config.dim)});
    std::copy(inputs.values.begin(),
              inputs.values.begin() +
                  static_cast<std::size_t>(n_train) * config.dim,
              shard.train.inputs.values.begin());
    std::copy(inputs.values.begin() +
                  static_cast<std::size_t>(n_train) * config.dim,
              inputs.values.end(), shard.test.inputs.values.begin());
    shard.train.labels.assign(labels.begin(), labels.begin() + n_train);
    shard.test.labels.assign(labels.begin() + n_train, labels.end());
    ds.clients[c] = std::move(shard);
  }

  if (config.mode == PartitionMode::NonIID && config.n_clients > 1) {
    const double tv = average_pairwise_label_tv(ds);
    if (tv < 0.5) {
      throw std::runtime_error(
          "synthesize: non-IID label skew too mild (average pairwise TV " +
          std::to_string(tv) + " < 0.5)");
    }
  }
  return ds;
}

double average_pairwise_label_tv(const FederatedDataset& ds) {
  const int C = ds.num_classes;
  std::vector<std::vector<double>> dist(ds.clients.size(),
                                        std::vector<double>(C, 0.0));
  for (std::size_t c = 0; c < ds.clients.size(); ++c) {
    const auto& labels = ds.clients[c].train.labels;
    for (int l : labels) dist[c][l] += 1.0;
    for (double& v : dist[c]) v /= static_cast<double>(labels.size());
  }
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < dist.size(); ++a) {
    for (std::size_t b = a + 1; b < dist.size(); ++b) {
      double tv = 0.0;
      for (int k = 0; k < C; ++k) tv += std::fabs(dist[a][k] - dist[b][k]);
      sum += tv / 2.0;
      ++pairs;
    }
  }
  return pairs ? sum / static_cast<double>(pairs) : 0.0;
}

namespace {

constexpr char kMagic[4] = {'F', 'A', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& f, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  f.write(buf, 4);
}
void write_u64(std::ofstream& f, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  f.write(buf, 8);
}
std::uint32_t read_u32(std::ifstream& f) {
  unsigned char buf[4];
  f.read(reinterpret_cast<char*>(buf), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{buf[i]} << (8 * i);
  return v;
}
std::uint64_t read_u64(std::ifstream& f) {
  unsigned char buf[8];
  f.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{buf[i]} << (8 * i);
  return v;
}

void write_batch(std::ofstream& f, const Batch& b) {
  write_u32(f, static_cast<std::uint32_t>(b.size()));
  f.write(reinterpret_cast<const char*>(b.inputs.values.data()),
          static_cast<std::streamsize>(b.inputs.values.size() * 8));
  for (int l : b.labels) write_u32(f, static_cast<std::uint32_t>(l));
}

Batch read_batch(std::ifstream& f, int dim) {
  Batch b;
  const std::uint32_t n = read_u32(f);
  b.inputs = Tensor({n, static_cast<std::size_t>(dim)});
  f.read(reinterpret_cast<char*>(b.inputs.values.data()),
         static_cast<std::streamsize>(b.inputs.values.size() * 8));
  b.labels.resize(n);
  for (auto& l : b.labels) l = static_cast<int>(read_u32(f));
  return b;
}

}  // namespace

void save_dataset(const FederatedDataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_dataset: cannot open " + path);
  f.write(kMagic, 4);
  write_u32(f, kVersion);
  write_u64(f, ds.seed);
  write_u32(f, ds.mode == PartitionMode::IID ? 0 : 1);
  write_u32(f, static_cast<std::uint32_t>(ds.num_classes));
  write_u32(f, static_cast<std::uint32_t>(ds.feature_dim));
  write_u32(f, static_cast<std::uint32_t>(ds.clients.size()));
  for (const auto& c : ds.clients) {
    write_batch(f, c.train);
    write_batch(f, c.test);
  }
  if (!f) throw std::runtime_error("save_dataset: write failed for " + path);
}

FederatedDataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_dataset: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("load_dataset: bad magic in " + path);
  }
  if (read_u32(f) != kVersion) {
    throw std::runtime_error("load_dataset: unsupported version in " + path);
  }
  FederatedDataset ds;
  ds.seed = read_u64(f);
  ds.mode = read_u32(f) == 0 ? PartitionMode::IID : PartitionMode::NonIID;
  ds.num_classes = static_cast<int>(read_u32(f));
  ds.feature_dim = static_cast<int>(read_u32(f));
  const std::uint32_t n_clients = read_u32(f);
  ds.clients.resize(n_clients);
  for (auto& c : ds.clients) {
    c.train = read_batch(f, ds.feature_dim);
    c.test = read_batch(f, ds.feature_dim);
  }
  if (!f) throw std::runtime_error("load_dataset: truncated file " + path);
  return ds;
}

}  // namespace fedafd
