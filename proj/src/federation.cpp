#include "fedafd/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace fedafd {

std::vector<int> select_clients(int n, double fraction, Rng& rng) {
  if (n < 1) throw std::invalid_argument("select_clients: need >= 1 client");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("select_clients: fraction must be in (0,1]");
  }
  const int m = static_cast<int>(
      std::max(1L, std::lround(fraction * static_cast<double>(n))));
  return rng.sample_without_replacement(n, std::min(m, n));
}

namespace {

std::vector<std::size_t> sorted_by_client(
    const std::vector<ClientUpdate>& updates) {
  std::vector<std::size_t> order(updates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return updates[a].client_id < updates[b].client_id;
  });
  return order;
}

double total_examples(const std::vector<ClientUpdate>& updates) {
  double n_t = 0.0;
  for (const auto& u : updates) {
    if (u.n_examples <= 0) {
      throw std::invalid_argument("aggregate: n_examples must be positive");
    }
    n_t += static_cast<double>(u.n_examples);
  }
  return n_t;
}

}  // namespace

ModelParams aggregate(const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) throw std::invalid_argument("aggregate: no updates");
  const double n_t = total_examples(updates);
  auto order = sorted_by_client(updates);

  ModelParams out = updates[order[0]].params;
  for (auto& l : out.layers) {
    std::fill(l.weights.values.begin(), l.weights.values.end(), 0.0);
    std::fill(l.biases.values.begin(), l.biases.values.end(), 0.0);
  }
  for (std::size_t oi : order) {
    const ClientUpdate& u = updates[oi];
    if (!u.params.same_shape(out)) {
      throw std::invalid_argument("aggregate: update shapes differ");
    }
    const double w = static_cast<double>(u.n_examples) / n_t;
    for (std::size_t i = 0; i < out.layers.size(); ++i) {
      for (std::size_t k = 0; k < out.layers[i].weights.values.size(); ++k) {
        out.layers[i].weights.values[k] += w * u.params.layers[i].weights.values[k];
      }
      for (std::size_t k = 0; k < out.layers[i].biases.values.size(); ++k) {
        out.layers[i].biases.values[k] += w * u.params.layers[i].biases.values[k];
      }
    }
  }
  return out;
}

ModelParams aggregate_around(const ModelParams& base,
                             const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) throw std::invalid_argument("aggregate: no updates");
  const double n_t = total_examples(updates);
  if (updates.size() == 1) {
    // Weight 1 exactly: the mean is the lone update.
    if (!updates[0].params.same_shape(base)) {
      throw std::invalid_argument("aggregate: update shapes differ");
    }
    return updates[0].params;
  }
  auto order = sorted_by_client(updates);

  ModelParams out = base;
  for (std::size_t oi : order) {
    const ClientUpdate& u = updates[oi];
    if (!u.params.same_shape(base)) {
      throw std::invalid_argument("aggregate: update shapes differ");
    }
    const double w = static_cast<double>(u.n_examples) / n_t;
    for (std::size_t i = 0; i < out.layers.size(); ++i) {
      auto& ow = out.layers[i].weights.values;
      const auto& uw = u.params.layers[i].weights.values;
      const auto& bw = base.layers[i].weights.values;
      for (std::size_t k = 0; k < ow.size(); ++k) ow[k] += w * (uw[k] - bw[k]);
      auto& ob = out.layers[i].biases.values;
      const auto& ub = u.params.layers[i].biases.values;
      const auto& bb = base.layers[i].biases.values;
      for (std::size_t k = 0; k < ob.size(); ++k) ob[k] += w * (ub[k] - bb[k]);
    }
  }
  return out;
}

const char kMetricsCsvHeader[] =
    "round,cum_seconds,cum_down_bytes,cum_up_bytes,train_loss,"
    "test_accuracy\n";

std::string eval_row_csv(const EvalRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.6f,%llu,%llu,%.9g,%.6f\n", r.round,
                r.cum_seconds,
                static_cast<unsigned long long>(r.cum_down_bytes),
                static_cast<unsigned long long>(r.cum_up_bytes), r.train_loss,
                r.test_accuracy);
  return buf;
}

std::string MetricsTable::to_csv() const {
  std::string out = kMetricsCsvHeader;
  for (const EvalRow& r : rows) out += eval_row_csv(r);
  return out;
}

std::uint64_t spec_hash(const SubModelSpec& spec) {
  return hash_tag(spec_to_json(spec).dump());
}

std::optional<double> MetricsTable::convergence_min(
    double target_accuracy) const {
  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(rows.size());
  for (const auto& r : rows) pairs.emplace_back(r.cum_seconds, r.test_accuracy);
  return convergence_minutes(pairs, target_accuracy);
}

double MetricsTable::final_accuracy() const {
  if (rows.empty()) throw std::logic_error("metrics: no rows");
  return rows.back().test_accuracy;
}

namespace {

struct EncodedTensors {
  std::vector<CompressedBlob> blobs;
  std::uint64_t bytes() const {
    std::uint64_t n = 0;
    for (const auto& b : blobs) n += b.payload_size_bytes();
    return n;
  }
};

// Weights through the requested codec, biases always raw.
EncodedTensors encode_params(const ModelParams& params, bool quant8,
                             std::uint64_t sign_base) {
  EncodedTensors out;
  for (std::size_t p = 0; p < params.layers.size(); ++p) {
    const auto& lp = params.layers[p];
    if (quant8) {
      out.blobs.push_back(
          quant8_encode(lp.weights, derive_seed(sign_base, "w", p)));
    } else {
      out.blobs.push_back(raw_encode(lp.weights.values));
    }
    out.blobs.push_back(raw_encode(lp.biases.values));
  }
  return out;
}

ModelParams decode_params(const EncodedTensors& enc,
                          const ModelParams& shape_like) {
  ModelParams out = shape_like;
  std::size_t bi = 0;
  for (auto& lp : out.layers) {
    const CompressedBlob& wb = enc.blobs[bi++];
    std::vector<double> w = wb.codec() == Codec::Quant8Hadamard
                                ? quant8_decode(wb)
                                : raw_decode(wb);
    if (w.size() != lp.weights.values.size()) {
      throw std::runtime_error("decode: weight length mismatch");
    }
    lp.weights.values = std::move(w);
    lp.biases.values = raw_decode(enc.blobs[bi++]);
  }
  return out;
}

}  // namespace

Experiment::Experiment(const ExperimentConfig& config)
    : Experiment(config, [&config] {
        if (!config.dataset_file.empty()) {
          return load_dataset(config.dataset_file);
        }
        Rng data_rng(derive_seed(config.seed, "data"));
        SynthConfig sc;
        sc.n_clients = config.clients;
        sc.n_per_client = config.per_client;
        sc.n_classes = config.classes;
        sc.dim = config.dim;
        sc.mode = config.partition_mode();
        sc.separation = config.separation;
        return synthesize(sc, data_rng);
      }()) {}

Experiment::Experiment(const ExperimentConfig& config, FederatedDataset data)
    : config_(config), arch_(config.build_arch()), data_(std::move(data)) {
  config_.validate();
  if (static_cast<int>(data_.clients.size()) != config_.clients) {
    throw std::invalid_argument("experiment: dataset has " +
                                std::to_string(data_.clients.size()) +
                                " clients, config expects " +
                                std::to_string(config_.clients));
  }
  for (std::size_t c = 0; c < data_.clients.size(); ++c) {
    if (data_.clients[c].train.size() > 0) {
      trainable_.push_back(static_cast<int>(c));
    }
  }
  if (trainable_.empty()) {
    throw std::invalid_argument("experiment: no client has training data");
  }
  Rng init_rng(derive_seed(config_.seed, "init"));
  global_ = init_params(arch_, init_rng);
  if (config_.mode == "afd_multi") {
    multi_.emplace(arch_, config_.clients, config_.fdr);
  } else if (config_.mode == "afd_single") {
    single_.emplace(arch_, config_.fdr);
  }
  dgc_spec_.resize(config_.clients);
  dgc_state_.resize(config_.clients);
  if (config_.net.sampling == NetworkModel::Sampling::PerExperiment) {
    Rng net_rng(derive_seed(config_.seed, "net"));
    fixed_rates_ = sample_rates(config_.net, net_rng);
  }
}

SubModelSpec Experiment::plan_spec(int t, int client,
                                   const SubModelSpec* shared) const {
  if (config_.mode == "none") return full_spec(arch_);
  if (config_.mode == "afd_single") return *shared;
  Rng rng(derive_seed(config_.seed, "plan", static_cast<std::uint64_t>(t),
                      static_cast<std::uint64_t>(client)));
  if (config_.mode == "fd") return select_random(arch_, config_.fdr, rng);
  return multi_->plan(client, rng);  // afd_multi
}

void Experiment::ensure_dgc_state(
    int client, const SubModelSpec& spec,
    const std::vector<std::vector<std::size_t>>& shapes) {
  // Residuals are only index-aligned while the client trains the same
  // sub-model; any spec change rebuilds the accumulators.
  if (!dgc_spec_[client] || !(*dgc_spec_[client] == spec)) {
    dgc_state_[client] = make_dgc_state(config_.dgc_config(), shapes);
    dgc_spec_[client] = spec;
  }
}

RoundMetrics Experiment::run_round(int t) {
  RoundMetrics rm;
  rm.round = t;

  Rng select_rng(derive_seed(config_.seed, "select",
                             static_cast<std::uint64_t>(t)));
  for (int pick : select_clients(static_cast<int>(trainable_.size()),
                                 config_.fraction, select_rng)) {
    rm.selected.push_back(trainable_[pick]);
  }

  LinkRates rates;
  if (fixed_rates_) {
    rates = *fixed_rates_;
  } else {
    Rng net_rng(derive_seed(config_.seed, "net", static_cast<std::uint64_t>(t)));
    rates = sample_rates(config_.net, net_rng);
  }

  std::optional<SubModelSpec> shared;
  if (config_.mode == "afd_single") {
    Rng plan_rng(derive_seed(config_.seed, "plan", static_cast<std::uint64_t>(t)));
    shared = single_->plan(plan_rng);
  }

  std::vector<ClientUpdate> updates;
  std::vector<std::pair<SubModelSpec, double>> feedback;  // per selected client
  std::vector<std::pair<std::uint64_t, std::uint64_t>> client_bytes;
  double loss_sum = 0.0;

  for (int c : rm.selected) {
    const SubModelSpec spec =
        plan_spec(t, c, shared ? &*shared : nullptr);
    ExtractResult sub = extract(global_, arch_, spec);

    // Server -> client: weights (optionally quantized) + raw biases.
    const std::uint64_t sign_base =
        derive_seed(config_.seed, "sign", static_cast<std::uint64_t>(t),
                    static_cast<std::uint64_t>(c));
    EncodedTensors down =
        encode_params(sub.params, config_.quant8_down, sign_base);
    const std::uint64_t down_bytes = down.bytes();
    ModelParams received = decode_params(down, sub.params);

    // Local training on the received sub-model.
    Rng train_rng(derive_seed(config_.seed, "train",
                              static_cast<std::uint64_t>(t),
                              static_cast<std::uint64_t>(c)));
    TrainResult trained =
        local_train(sub.arch, received, data_.clients[c].train,
                    config_.epochs, config_.batch_size, config_.lr, train_rng);

    // Client -> server.
    std::uint64_t up_bytes = 0;
    ModelParams reconstructed = trained.params;
    if (config_.dgc_up) {
      std::vector<std::vector<std::size_t>> wshapes;
      std::vector<Tensor> deltas;
      for (std::size_t p = 0; p < trained.params.layers.size(); ++p) {
        const Tensor& tw = trained.params.layers[p].weights;
        wshapes.push_back(tw.shape);
        Tensor d = tw;
        const auto& rw = received.layers[p].weights.values;
        for (std::size_t k = 0; k < d.values.size(); ++k) d.values[k] -= rw[k];
        deltas.push_back(std::move(d));
      }
      ensure_dgc_state(c, spec, wshapes);
      CompressedBlob blob = dgc_encode(deltas, *dgc_state_[c]);
      up_bytes += blob.payload_size_bytes();
      std::vector<Tensor> decoded = dgc_decode(blob, wshapes);
      for (std::size_t p = 0; p < reconstructed.layers.size(); ++p) {
        auto& w = reconstructed.layers[p].weights.values;
        const auto& rw = received.layers[p].weights.values;
        for (std::size_t k = 0; k < w.size(); ++k) {
          w[k] = rw[k] + decoded[p].values[k];
        }
      }
      for (const auto& lp : trained.params.layers) {
        up_bytes += raw_encode(lp.biases.values).payload_size_bytes();
      }
    } else {
      EncodedTensors up = encode_params(
          trained.params, config_.quant8_up,
          derive_seed(sign_base, "up"));
      up_bytes = up.bytes();
      reconstructed = decode_params(up, trained.params);
    }

    ClientUpdate u;
    u.client_id = c;
    u.params = lift(global_, arch_, spec, reconstructed);
    u.n_examples = static_cast<std::int64_t>(data_.clients[c].train.size());
    updates.push_back(std::move(u));

    feedback.emplace_back(spec, trained.final_epoch_mean_loss);
    client_bytes.emplace_back(down_bytes, up_bytes);
    rm.down_bytes += down_bytes;
    rm.up_bytes += up_bytes;
    loss_sum += trained.final_epoch_mean_loss;
  }

  if (config_.aggregate == "trained_only") {
    // Ablation: average each coordinate only over the clients that trained
    // it. Equivalent to masking each update to its spec'd coordinates.
    ModelParams zeros = global_;
    for (auto& l : zeros.layers) {
      std::fill(l.weights.values.begin(), l.weights.values.end(), 0.0);
      std::fill(l.biases.values.begin(), l.biases.values.end(), 0.0);
    }
    ModelParams sums = zeros;
    ModelParams weight_sums = zeros;
    for (std::size_t ui = 0; ui < updates.size(); ++ui) {
      const int c = updates[ui].client_id;
      const double n_c =
          static_cast<double>(data_.clients[c].train.size());
      // Mark trained coordinates by lifting a flag sub-model onto zeros.
      const SubModelSpec& spec = feedback[ui].first;
      ExtractResult flag_sub = extract(zeros, arch_, spec);
      for (auto& l : flag_sub.params.layers) {
        std::fill(l.weights.values.begin(), l.weights.values.end(), 1.0);
        std::fill(l.biases.values.begin(), l.biases.values.end(), 1.0);
      }
      ModelParams mask = lift(zeros, arch_, spec, flag_sub.params);
      for (std::size_t i = 0; i < sums.layers.size(); ++i) {
        auto& sw = sums.layers[i].weights.values;
        auto& ww = weight_sums.layers[i].weights.values;
        const auto& uw = updates[ui].params.layers[i].weights.values;
        const auto& mw = mask.layers[i].weights.values;
        for (std::size_t k = 0; k < sw.size(); ++k) {
          sw[k] += n_c * mw[k] * uw[k];
          ww[k] += n_c * mw[k];
        }
        auto& sb = sums.layers[i].biases.values;
        auto& wb = weight_sums.layers[i].biases.values;
        const auto& ub = updates[ui].params.layers[i].biases.values;
        const auto& mb = mask.layers[i].biases.values;
        for (std::size_t k = 0; k < sb.size(); ++k) {
          sb[k] += n_c * mb[k] * ub[k];
          wb[k] += n_c * mb[k];
        }
      }
    }
    ModelParams next = global_;
    for (std::size_t i = 0; i < next.layers.size(); ++i) {
      auto& nw = next.layers[i].weights.values;
      const auto& sw = sums.layers[i].weights.values;
      const auto& ww = weight_sums.layers[i].weights.values;
      for (std::size_t k = 0; k < nw.size(); ++k) {
        if (ww[k] > 0.0) nw[k] = sw[k] / ww[k];
      }
      auto& nb = next.layers[i].biases.values;
      const auto& sb = sums.layers[i].biases.values;
      const auto& wb = weight_sums.layers[i].biases.values;
      for (std::size_t k = 0; k < nb.size(); ++k) {
        if (wb[k] > 0.0) nb[k] = sb[k] / wb[k];
      }
    }
    global_ = std::move(next);
  } else {
    global_ = aggregate_around(global_, updates);
  }

  // Controller feedback, ascending client order.
  if (config_.mode == "afd_multi") {
    for (std::size_t i = 0; i < rm.selected.size(); ++i) {
      const int c = rm.selected[i];
      multi_->feedback(c, feedback[i].first, feedback[i].second);
      controller_log_.push_back({t, c, spec_hash(feedback[i].first),
                                 multi_->state(c).recorded,
                                 feedback[i].second});
    }
  } else if (config_.mode == "afd_single") {
    std::vector<double> losses;
    losses.reserve(feedback.size());
    for (const auto& [spec, loss] : feedback) losses.push_back(loss);
    single_->feedback(*shared, losses);
    controller_log_.push_back({t, -1, spec_hash(*shared),
                               single_->state().recorded,
                               single_->state().last_loss});
  }

  const double round_s = round_time(client_bytes, rates,
                                    config_.net.compute_seconds_per_round);
  std::uint64_t max_down = 0, max_up = 0;
  for (const auto& [d, u] : client_bytes) {
    max_down = std::max(max_down, d);
    max_up = std::max(max_up, u);
  }
  clock_.add({transfer_seconds(max_down, rates.down_mbps),
              transfer_seconds(max_up, rates.up_mbps), round_s});

  cum_down_ += rm.down_bytes;
  cum_up_ += rm.up_bytes;
  rm.mean_train_loss = loss_sum / static_cast<double>(rm.selected.size());
  rm.round_seconds = round_s;
  last_train_loss_ = rm.mean_train_loss;
  return rm;
}

MetricsTable Experiment::run(
    const std::function<void(const EvalRow&)>& on_row) {
  MetricsTable table;
  const Batch test_pool = data_.pooled_test();
  auto emit = [&](const EvalRow& row) {
    table.rows.push_back(row);
    if (on_row) on_row(row);
  };

  // Initial row: pre-training loss on the pooled training data.
  {
    const Batch train_pool = data_.pooled_train();
    EvalRow row;
    row.round = 0;
    row.train_loss = evaluate(arch_, global_, train_pool).mean_loss;
    row.test_accuracy = evaluate(arch_, global_, test_pool).accuracy;
    emit(row);
  }

  for (int t = 1; t <= config_.rounds; ++t) {
    RoundMetrics rm = run_round(t);
    if (t % config_.eval_every == 0 || t == config_.rounds) {
      EvalRow row;
      row.round = t;
      row.cum_seconds = clock_.cumulative_seconds;
      row.cum_down_bytes = cum_down_;
      row.cum_up_bytes = cum_up_;
      row.train_loss = rm.mean_train_loss;
      row.test_accuracy = evaluate(arch_, global_, test_pool).accuracy;
      emit(row);
    }
  }
  return table;
}

MetricsTable run_experiment(const ExperimentConfig& config) {
  Experiment exp(config);
  return exp.run();
}

}  // namespace fedafd
