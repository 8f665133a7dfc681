#include "fedafd/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedafd {

namespace {

std::size_t flat_features(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

[[noreturn]] void layer_error(int layer_index, const LayerSpec& spec,
                              const std::string& what) {
  throw std::invalid_argument("layer " + std::to_string(layer_index) + " (" +
                              layer_kind_name(spec.kind) + "): " + what);
}

}  // namespace

const char* layer_kind_name(LayerSpec::Kind k) {
  switch (k) {
    case LayerSpec::Kind::Dense: return "Dense";
    case LayerSpec::Kind::Conv2d: return "Conv2d";
    case LayerSpec::Kind::MaxPool2x2: return "MaxPool2x2";
    case LayerSpec::Kind::Relu: return "Relu";
    case LayerSpec::Kind::SoftmaxOutput: return "SoftmaxOutput";
  }
  return "?";
}

std::vector<std::vector<std::size_t>> activation_shapes(
    const Architecture& arch) {
  std::vector<std::vector<std::size_t>> shapes;
  shapes.reserve(arch.layers.size() + 1);
  std::vector<std::size_t> cur = arch.input_shape;
  shapes.push_back(cur);
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    switch (l.kind) {
      case LayerSpec::Kind::Dense: {
        if (l.in_units <= 0 || l.out_units <= 0) {
          layer_error(static_cast<int>(i), l, "dimensions must be positive");
        }
        if (flat_features(cur) != static_cast<std::size_t>(l.in_units)) {
          layer_error(static_cast<int>(i), l,
                      "expects " + std::to_string(l.in_units) +
                          " input features, got " + shape_str(cur));
        }
        cur = {static_cast<std::size_t>(l.out_units)};
        break;
      }
      case LayerSpec::Kind::Conv2d: {
        if (l.in_channels <= 0 || l.out_channels <= 0 || l.kernel_h <= 0 ||
            l.kernel_w <= 0) {
          layer_error(static_cast<int>(i), l, "dimensions must be positive");
        }
        if (cur.size() != 3 ||
            cur[0] != static_cast<std::size_t>(l.in_channels)) {
          layer_error(static_cast<int>(i), l,
                      "expects [" + std::to_string(l.in_channels) +
                          ",h,w] input, got " + shape_str(cur));
        }
        if (cur[1] < static_cast<std::size_t>(l.kernel_h) ||
            cur[2] < static_cast<std::size_t>(l.kernel_w)) {
          layer_error(static_cast<int>(i), l,
                      "kernel larger than input " + shape_str(cur));
        }
        cur = {static_cast<std::size_t>(l.out_channels),
               cur[1] - static_cast<std::size_t>(l.kernel_h) + 1,
               cur[2] - static_cast<std::size_t>(l.kernel_w) + 1};
        break;
      }
      case LayerSpec::Kind::MaxPool2x2: {
        if (cur.size() != 3 || cur[1] < 2 || cur[2] < 2) {
          layer_error(static_cast<int>(i), l,
                      "expects [c,h,w] input with h,w >= 2, got " +
                          shape_str(cur));
        }
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      }
      case LayerSpec::Kind::Relu:
        break;
      case LayerSpec::Kind::SoftmaxOutput: {
        if (i + 1 != arch.layers.size()) {
          layer_error(static_cast<int>(i), l, "must be the final layer");
        }
        if (cur.size() != 1) {
          layer_error(static_cast<int>(i), l,
                      "expects flat logits, got " + shape_str(cur));
        }
        break;
      }
    }
    shapes.push_back(cur);
  }
  return shapes;
}

void validate_arch(const Architecture& arch) {
  if (arch.input_shape.empty() ||
      (arch.input_shape.size() != 1 && arch.input_shape.size() != 3)) {
    throw std::invalid_argument(
        "architecture: input shape must be [features] or [channels,h,w]");
  }
  if (arch.layers.empty() ||
      arch.layers.back().kind != LayerSpec::Kind::SoftmaxOutput) {
    throw std::invalid_argument(
        "architecture: last layer must be SoftmaxOutput");
  }
  activation_shapes(arch);  // throws on any dimension mismatch
  auto params = param_layer_indices(arch);
  if (params.empty()) {
    throw std::invalid_argument(
        "architecture: needs at least one parameterized layer");
  }
  const LayerSpec& last = arch.layers[params.back()];
  if (last.prunable) {
    layer_error(params.back(), last,
                "classifier layer must not be prunable (output stays intact)");
  }
}

std::vector<int> param_layer_indices(const Architecture& arch) {
  std::vector<int> out;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (arch.layers[i].parameterized()) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> prunable_layer_indices(const Architecture& arch) {
  std::vector<int> out;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (arch.layers[i].prunable) out.push_back(static_cast<int>(i));
  }
  return out;
}

int num_classes(const Architecture& arch) {
  auto params = param_layer_indices(arch);
  return arch.layers[params.back()].out_units;
}

Architecture make_mlp(int input_dim, const std::vector<int>& hidden,
                      int classes) {
  Architecture arch;
  arch.input_shape = {static_cast<std::size_t>(input_dim)};
  int prev = input_dim;
  for (int h : hidden) {
    arch.layers.push_back(LayerSpec::dense(prev, h, /*prunable_units=*/true));
    arch.layers.push_back(LayerSpec::relu());
    prev = h;
  }
  arch.layers.push_back(LayerSpec::dense(prev, classes, false));
  arch.layers.push_back(LayerSpec::softmax_output());
  validate_arch(arch);
  return arch;
}

Architecture make_cnn(int in_channels, int height, int width,
                      const std::vector<int>& conv_channels, int dense_units,
                      int classes) {
  Architecture arch;
  arch.input_shape = {static_cast<std::size_t>(in_channels),
                      static_cast<std::size_t>(height),
                      static_cast<std::size_t>(width)};
  int ch = in_channels;
  int h = height, w = width;
  for (int oc : conv_channels) {
    arch.layers.push_back(LayerSpec::conv2d(ch, oc, 3, 3, true));
    arch.layers.push_back(LayerSpec::relu());
    h -= 2;
    w -= 2;
    if (h >= 2 && w >= 2) {
      arch.layers.push_back(LayerSpec::maxpool());
      h /= 2;
      w /= 2;
    }
    ch = oc;
  }
  arch.layers.push_back(LayerSpec::dense(ch * h * w, dense_units, true));
  arch.layers.push_back(LayerSpec::relu());
  arch.layers.push_back(LayerSpec::dense(dense_units, classes, false));
  arch.layers.push_back(LayerSpec::softmax_output());
  validate_arch(arch);
  return arch;
}

bool ModelParams::same_shape(const ModelParams& o) const {
  if (layers.size() != o.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].weights.same_shape(o.layers[i].weights) ||
        !layers[i].biases.same_shape(o.layers[i].biases)) {
      return false;
    }
  }
  return true;
}

ModelParams init_params(const Architecture& arch, Rng& rng) {
  validate_arch(arch);
  ModelParams params;
  for (int idx : param_layer_indices(arch)) {
    const LayerSpec& l = arch.layers[idx];
    LayerParams lp;
    double fan_in = 0, fan_out = 0;
    if (l.kind == LayerSpec::Kind::Dense) {
      lp.weights = Tensor({static_cast<std::size_t>(l.out_units),
                           static_cast<std::size_t>(l.in_units)});
      lp.biases = Tensor({static_cast<std::size_t>(l.out_units)});
      fan_in = l.in_units;
      fan_out = l.out_units;
    } else {
      lp.weights = Tensor({static_cast<std::size_t>(l.out_channels),
                           static_cast<std::size_t>(l.in_channels),
                           static_cast<std::size_t>(l.kernel_h),
                           static_cast<std::size_t>(l.kernel_w)});
      lp.biases = Tensor({static_cast<std::size_t>(l.out_channels)});
      fan_in = static_cast<double>(l.in_channels) * l.kernel_h * l.kernel_w;
      fan_out = static_cast<double>(l.out_channels) * l.kernel_h * l.kernel_w;
    }
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : lp.weights.values) v = rng.next_uniform(-bound, bound);
    params.layers.push_back(std::move(lp));
  }
  return params;
}

namespace {

void check_params_match(const Architecture& arch, const ModelParams& params) {
  auto idxs = param_layer_indices(arch);
  if (params.layers.size() != idxs.size()) {
    throw std::invalid_argument("params: expected " +
                                std::to_string(idxs.size()) +
                                " parameterized layers, got " +
                                std::to_string(params.layers.size()));
  }
  for (std::size_t p = 0; p < idxs.size(); ++p) {
    const LayerSpec& l = arch.layers[idxs[p]];
    const LayerParams& lp = params.layers[p];
    std::vector<std::size_t> want_w, want_b;
    if (l.kind == LayerSpec::Kind::Dense) {
      want_w = {static_cast<std::size_t>(l.out_units),
                static_cast<std::size_t>(l.in_units)};
      want_b = {static_cast<std::size_t>(l.out_units)};
    } else {
      want_w = {static_cast<std::size_t>(l.out_channels),
                static_cast<std::size_t>(l.in_channels),
                static_cast<std::size_t>(l.kernel_h),
                static_cast<std::size_t>(l.kernel_w)};
      want_b = {static_cast<std::size_t>(l.out_channels)};
    }
    if (lp.weights.shape != want_w || lp.biases.shape != want_b) {
      layer_error(idxs[p], l,
                  "parameter shapes " + shape_str(lp.weights.shape) + "/" +
                      shape_str(lp.biases.shape) + " do not match layer");
    }
  }
}

Tensor dense_forward(const LayerSpec& l, const LayerParams& lp,
                     const Tensor& in) {
  const std::size_t batch = in.shape[0];
  const std::size_t fin = static_cast<std::size_t>(l.in_units);
  const std::size_t fout = static_cast<std::size_t>(l.out_units);
  Tensor out({batch, fout});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* x = &in.values[b * fin];
    double* y = &out.values[b * fout];
    for (std::size_t o = 0; o < fout; ++o) {
      const double* w = &lp.weights.values[o * fin];
      double acc = lp.biases.values[o];
      for (std::size_t i = 0; i < fin; ++i) acc += w[i] * x[i];
      y[o] = acc;
    }
  }
  return out;
}

Tensor conv_forward(const LayerSpec& l, const LayerParams& lp,
                    const Tensor& in) {
  const std::size_t batch = in.shape[0];
  const std::size_t cin = in.shape[1], hin = in.shape[2], win = in.shape[3];
  const std::size_t cout = static_cast<std::size_t>(l.out_channels);
  const std::size_t kh = static_cast<std::size_t>(l.kernel_h);
  const std::size_t kw = static_cast<std::size_t>(l.kernel_w);
  const std::size_t hout = hin - kh + 1, wout = win - kw + 1;
  Tensor out({batch, cout, hout, wout});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      const double bias = lp.biases.values[co];
      for (std::size_t y = 0; y < hout; ++y) {
        for (std::size_t x = 0; x < wout; ++x) {
          double acc = bias;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t dy = 0; dy < kh; ++dy) {
              const double* wrow =
                  &lp.weights.values[((co * cin + ci) * kh + dy) * kw];
              const double* irow =
                  &in.values[((b * cin + ci) * hin + y + dy) * win + x];
              for (std::size_t dx = 0; dx < kw; ++dx) acc += wrow[dx] * irow[dx];
            }
          }
          out.values[((b * cout + co) * hout + y) * wout + x] = acc;
        }
      }
    }
  }
  return out;
}

Tensor maxpool_forward(const Tensor& in, std::vector<std::size_t>& argmax) {
  const std::size_t batch = in.shape[0], c = in.shape[1];
  const std::size_t hin = in.shape[2], win = in.shape[3];
  const std::size_t hout = hin / 2, wout = win / 2;
  Tensor out({batch, c, hout, wout});
  argmax.assign(out.numel(), 0);
  std::size_t oi = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < hout; ++y) {
        for (std::size_t x = 0; x < wout; ++x, ++oi) {
          double best = -HUGE_VAL;
          std::size_t best_idx = 0;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              std::size_t idx =
                  ((b * c + ch) * hin + 2 * y + dy) * win + 2 * x + dx;
              // Strict > keeps the first maximum on ties.
              if (in.values[idx] > best) {
                best = in.values[idx];
                best_idx = idx;
              }
            }
          }
          out.values[oi] = best;
          argmax[oi] = best_idx;
        }
      }
    }
  }
  return out;
}

Tensor reshape_batch(const Tensor& t, const std::vector<std::size_t>& feat) {
  std::vector<std::size_t> shape;
  shape.push_back(t.shape[0]);
  shape.insert(shape.end(), feat.begin(), feat.end());
  return Tensor(shape, t.values);
}

}  // namespace

std::pair<Tensor, ForwardCache> forward(const Architecture& arch,
                                        const ModelParams& params,
                                        const Batch& batch) {
  check_params_match(arch, params);
  if (batch.inputs.shape.empty() || batch.inputs.shape[0] == 0) {
    throw std::invalid_argument("forward: empty batch");
  }
  if (batch.inputs.shape[0] != batch.labels.size() && !batch.labels.empty()) {
    throw std::invalid_argument("forward: label count does not match batch");
  }
  auto shapes = activation_shapes(arch);
  std::vector<std::size_t> in_feat(batch.inputs.shape.begin() + 1,
                                   batch.inputs.shape.end());
  if (flat_features(in_feat) != flat_features(shapes[0])) {
    throw std::invalid_argument("forward: batch features " +
                                shape_str(in_feat) +
                                " do not match architecture input " +
                                shape_str(shapes[0]));
  }

  ForwardCache cache;
  cache.layer_inputs.resize(arch.layers.size());
  cache.pool_argmax.resize(arch.layers.size());

  Tensor cur = reshape_batch(batch.inputs, shapes[0]);
  std::size_t p = 0;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    switch (l.kind) {
      case LayerSpec::Kind::Dense: {
        Tensor flat = reshape_batch(cur, {flat_features(shapes[i])});
        cache.layer_inputs[i] = flat;
        cur = dense_forward(l, params.layers[p], flat);
        ++p;
        break;
      }
      case LayerSpec::Kind::Conv2d: {
        cache.layer_inputs[i] = cur;
        cur = conv_forward(l, params.layers[p], cur);
        ++p;
        break;
      }
      case LayerSpec::Kind::MaxPool2x2: {
        cache.layer_inputs[i] = cur;
        cur = maxpool_forward(cur, cache.pool_argmax[i]);
        break;
      }
      case LayerSpec::Kind::Relu: {
        cache.layer_inputs[i] = cur;
        for (double& v : cur.values) v = v > 0.0 ? v : 0.0;
        break;
      }
      case LayerSpec::Kind::SoftmaxOutput:
        break;  // identity here; the loss applies softmax
    }
  }
  cache.logits = cur;
  return {cur, std::move(cache)};
}

LossAndGrad loss_and_grad(const Architecture& arch, const ModelParams& params,
                          const Batch& batch) {
  auto [logits, cache] = forward(arch, params, batch);
  const std::size_t bsz = logits.shape[0];
  const std::size_t classes = logits.shape[1];
  if (batch.labels.size() != bsz) {
    throw std::invalid_argument("loss_and_grad: labels missing");
  }
  for (int lab : batch.labels) {
    if (lab < 0 || static_cast<std::size_t>(lab) >= classes) {
      throw std::invalid_argument("loss_and_grad: label out of range");
    }
  }

  // Mean softmax cross-entropy; dLogits = (softmax - onehot) / batch.
  double loss = 0.0;
  Tensor dlogits({bsz, classes});
  for (std::size_t b = 0; b < bsz; ++b) {
    const double* z = &logits.values[b * classes];
    double zmax = z[0];
    for (std::size_t c = 1; c < classes; ++c) zmax = std::max(zmax, z[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z[c] - zmax);
    const double lse = zmax + std::log(sum);
    loss += lse - z[batch.labels[b]];
    for (std::size_t c = 0; c < classes; ++c) {
      double p = std::exp(z[c] - zmax) / sum;
      dlogits.values[b * classes + c] =
          (p - (static_cast<std::size_t>(batch.labels[b]) == c ? 1.0 : 0.0)) /
          static_cast<double>(bsz);
    }
  }
  loss /= static_cast<double>(bsz);

  // Backward pass.
  ModelParams grads;
  grads.layers.resize(params.layers.size());
  auto pidx = param_layer_indices(arch);
  Tensor delta = dlogits;
  int p = static_cast<int>(params.layers.size()) - 1;
  for (int i = static_cast<int>(arch.layers.size()) - 1; i >= 0; --i) {
    const LayerSpec& l = arch.layers[i];
    switch (l.kind) {
      case LayerSpec::Kind::SoftmaxOutput:
        break;
      case LayerSpec::Kind::Relu: {
        const Tensor& in = cache.layer_inputs[i];
        for (std::size_t k = 0; k < delta.values.size(); ++k) {
          if (in.values[k] <= 0.0) delta.values[k] = 0.0;
        }
        break;
      }
      case LayerSpec::Kind::MaxPool2x2: {
        const Tensor& in = cache.layer_inputs[i];
        Tensor din(in.shape);
        const auto& argmax = cache.pool_argmax[i];
        for (std::size_t k = 0; k < delta.values.size(); ++k) {
          din.values[argmax[k]] += delta.values[k];
        }
        delta = std::move(din);
        break;
      }
      case LayerSpec::Kind::Dense: {
        const Tensor& x = cache.layer_inputs[i];
        const LayerParams& lp = params.layers[p];
        const std::size_t bsz2 = x.shape[0];
        const std::size_t fin = static_cast<std::size_t>(l.in_units);
        const std::size_t fout = static_cast<std::size_t>(l.out_units);
        LayerParams g;
        g.weights = Tensor(lp.weights.shape);
        g.biases = Tensor(lp.biases.shape);
        Tensor din({bsz2, fin});
        for (std::size_t b = 0; b < bsz2; ++b) {
          const double* dy = &delta.values[b * fout];
          const double* xb = &x.values[b * fin];
          double* dx = &din.values[b * fin];
          for (std::size_t o = 0; o < fout; ++o) {
            const double d = dy[o];
            g.biases.values[o] += d;
            double* gw = &g.weights.values[o * fin];
            const double* w = &lp.weights.values[o * fin];
            for (std::size_t k = 0; k < fin; ++k) {
              gw[k] += d * xb[k];
              dx[k] += d * w[k];
            }
          }
        }
        grads.layers[p] = std::move(g);
        delta = std::move(din);
        --p;
        break;
      }
      case LayerSpec::Kind::Conv2d: {
        const Tensor& x = cache.layer_inputs[i];
        const LayerParams& lp = params.layers[p];
        const std::size_t bsz2 = x.shape[0];
        const std::size_t cin = x.shape[1], hin = x.shape[2], win = x.shape[3];
        const std::size_t cout = static_cast<std::size_t>(l.out_channels);
        const std::size_t kh = static_cast<std::size_t>(l.kernel_h);
        const std::size_t kw = static_cast<std::size_t>(l.kernel_w);
        const std::size_t hout = hin - kh + 1, wout = win - kw + 1;
        LayerParams g;
        g.weights = Tensor(lp.weights.shape);
        g.biases = Tensor(lp.biases.shape);
        Tensor din(x.shape);
        for (std::size_t b = 0; b < bsz2; ++b) {
          for (std::size_t co = 0; co < cout; ++co) {
            for (std::size_t y = 0; y < hout; ++y) {
              for (std::size_t xx = 0; xx < wout; ++xx) {
                const double d =
                    delta.values[((b * cout + co) * hout + y) * wout + xx];
                if (d == 0.0) continue;
                g.biases.values[co] += d;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  for (std::size_t dy = 0; dy < kh; ++dy) {
                    double* gw =
                        &g.weights.values[((co * cin + ci) * kh + dy) * kw];
                    const double* wr =
                        &lp.weights.values[((co * cin + ci) * kh + dy) * kw];
                    const double* xr =
                        &x.values[((b * cin + ci) * hin + y + dy) * win + xx];
                    double* dxr =
                        &din.values[((b * cin + ci) * hin + y + dy) * win + xx];
                    for (std::size_t dx = 0; dx < kw; ++dx) {
                      gw[dx] += d * xr[dx];
                      dxr[dx] += d * wr[dx];
                    }
                  }
                }
              }
            }
          }
        }
        grads.layers[p] = std::move(g);
        delta = std::move(din);
        --p;
        break;
      }
    }
  }

  if (!std::isfinite(loss)) {
    throw std::runtime_error("loss_and_grad: non-finite loss");
  }
  return {loss, std::move(grads)};
}

ModelParams sgd_step(const ModelParams& params, const ModelParams& grads,
                     double lr) {
  if (!params.same_shape(grads)) {
    throw std::invalid_argument("sgd_step: gradient shapes do not match");
  }
  ModelParams out = params;
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    for (std::size_t k = 0; k < out.layers[i].weights.values.size(); ++k) {
      out.layers[i].weights.values[k] -= lr * grads.layers[i].weights.values[k];
    }
    for (std::size_t k = 0; k < out.layers[i].biases.values.size(); ++k) {
      out.layers[i].biases.values[k] -= lr * grads.layers[i].biases.values[k];
    }
  }
  return out;
}

namespace {

Batch gather_batch(const Batch& shard, const std::vector<int>& order,
                   std::size_t begin, std::size_t end) {
  const std::size_t feat = shard.inputs.numel() / shard.inputs.shape[0];
  std::vector<std::size_t> shape = shard.inputs.shape;
  shape[0] = end - begin;
  Batch out;
  out.inputs = Tensor(shape);
  out.labels.resize(end - begin);
  for (std::size_t k = begin; k < end; ++k) {
    const std::size_t src = static_cast<std::size_t>(order[k]);
    std::copy(shard.inputs.values.begin() + src * feat,
              shard.inputs.values.begin() + (src + 1) * feat,
              out.inputs.values.begin() + (k - begin) * feat);
    out.labels[k - begin] = shard.labels[src];
  }
  return out;
}

}  // namespace

TrainResult local_train(const Architecture& arch, const ModelParams& params,
                        const Batch& shard, int epochs, int batch_size,
                        double lr, Rng& rng) {
  if (shard.size() == 0) {
    throw std::invalid_argument("local_train: empty shard");
  }
  if (epochs < 1 || batch_size < 1) {
    throw std::invalid_argument("local_train: epochs and batch_size must be >= 1");
  }
  const std::size_t n = shard.size();
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);

  ModelParams cur = params;
  double final_epoch_loss = 0.0;
  for (int e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    double epoch_loss_sum = 0.0;
    for (std::size_t begin = 0; begin < n;
         begin += static_cast<std::size_t>(batch_size)) {
      const std::size_t end =
          std::min(n, begin + static_cast<std::size_t>(batch_size));
      Batch mb = gather_batch(shard, order, begin, end);
      LossAndGrad lg = loss_and_grad(arch, cur, mb);
      epoch_loss_sum += lg.loss * static_cast<double>(end - begin);
      cur = sgd_step(cur, lg.grads, lr);
    }
    final_epoch_loss = epoch_loss_sum / static_cast<double>(n);
  }
  return {std::move(cur), final_epoch_loss};
}

EvalResult evaluate(const Architecture& arch, const ModelParams& params,
                    const Batch& data) {
  auto [logits, cache] = forward(arch, params, data);
  (void)cache;
  const std::size_t bsz = logits.shape[0];
  const std::size_t classes = logits.shape[1];
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < bsz; ++b) {
    const double* z = &logits.values[b * classes];
    double zmax = z[0];
    std::size_t arg = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (z[c] > zmax) {
        zmax = z[c];
        arg = c;
      }
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z[c] - zmax);
    loss += zmax + std::log(sum) - z[data.labels[b]];
    if (arg == static_cast<std::size_t>(data.labels[b])) ++correct;
  }
  return {loss / static_cast<double>(bsz),
          static_cast<double>(correct) / static_cast<double>(bsz)};
}

}  // namespace fedafd
