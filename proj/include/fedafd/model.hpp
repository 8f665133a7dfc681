#pragma once

// Minimal feed-forward network engine: dense, 3x3/5x5 conv (stride 1, valid
// padding), 2x2 max-pool (stride 2), relu, softmax cross-entropy. Exact
// backpropagation and plain SGD, enough to host sub-model training. All
// operations are pure functions of their inputs plus an explicit Rng.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedafd/rng.hpp"
#include "fedafd/tensor.hpp"

namespace fedafd {

struct LayerSpec {
  enum class Kind { Dense, Conv2d, MaxPool2x2, Relu, SoftmaxOutput };

  Kind kind = Kind::Dense;
  // Dense
  int in_units = 0;
  int out_units = 0;
  // Conv2d
  int in_channels = 0;
  int out_channels = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  // True when this layer's output units (hidden neurons for Dense, output
  // filters for Conv2d) may be dropped when building sub-models. The
  // network's input features and the final classifier layer stay intact.
  bool prunable = false;

  static LayerSpec dense(int in, int out, bool prunable_units) {
    LayerSpec s;
    s.kind = Kind::Dense;
    s.in_units = in;
    s.out_units = out;
    s.prunable = prunable_units;
    return s;
  }
  static LayerSpec conv2d(int in_ch, int out_ch, int kh, int kw,
                          bool prunable_filters) {
    LayerSpec s;
    s.kind = Kind::Conv2d;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel_h = kh;
    s.kernel_w = kw;
    s.prunable = prunable_filters;
    return s;
  }
  static LayerSpec maxpool() {
    LayerSpec s;
    s.kind = Kind::MaxPool2x2;
    return s;
  }
  static LayerSpec relu() {
    LayerSpec s;
    s.kind = Kind::Relu;
    return s;
  }
  static LayerSpec softmax_output() {
    LayerSpec s;
    s.kind = Kind::SoftmaxOutput;
    return s;
  }

  bool parameterized() const {
    return kind == Kind::Dense || kind == Kind::Conv2d;
  }
  // Number of droppable units this layer produces.
  int unit_count() const {
    return kind == Kind::Dense ? out_units
           : kind == Kind::Conv2d ? out_channels
                                  : 0;
  }
};

const char* layer_kind_name(LayerSpec::Kind k);

struct Architecture {
  // [features] for vector inputs, [channels, height, width] for images.
  std::vector<std::size_t> input_shape;
  std::vector<LayerSpec> layers;
};

// Throws std::invalid_argument naming the offending layer when the layer
// dimensions do not chain, the final layer is not SoftmaxOutput, or the last
// parameterized layer is marked prunable.
void validate_arch(const Architecture& arch);

// Per-layer activation shapes (batch dimension excluded): entry i is the
// shape entering layer i; the final entry is the logits shape.
std::vector<std::vector<std::size_t>> activation_shapes(
    const Architecture& arch);

// Indices into arch.layers of the parameterized layers, in order. ModelParams
// stores one weights/biases pair per entry of this list.
std::vector<int> param_layer_indices(const Architecture& arch);

// Indices into arch.layers of the prunable layers, in order.
std::vector<int> prunable_layer_indices(const Architecture& arch);

int num_classes(const Architecture& arch);

// input -> hidden Dense+Relu blocks -> classifier Dense -> softmax. Hidden
// layers are prunable, the classifier is not.
Architecture make_mlp(int input_dim, const std::vector<int>& hidden,
                      int classes);

// Conv(3x3)+Relu+MaxPool blocks over a [channels,h,w] input, then a prunable
// Dense+Relu block and the intact classifier.
Architecture make_cnn(int in_channels, int height, int width,
                      const std::vector<int>& conv_channels, int dense_units,
                      int classes);

struct LayerParams {
  Tensor weights;
  Tensor biases;
};

struct ModelParams {
  std::vector<LayerParams> layers;  // one per parameterized layer

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.numel() + l.biases.numel();
    return n;
  }
  bool same_shape(const ModelParams& o) const;
};

struct Batch {
  Tensor inputs;            // [batch, features...] row-major
  std::vector<int> labels;  // class indices, one per example

  std::size_t size() const { return labels.size(); }
};

struct ForwardCache {
  std::vector<Tensor> layer_inputs;  // input tensor seen by each layer
  std::vector<std::vector<std::size_t>> pool_argmax;  // per layer, MaxPool only
  Tensor logits;
};

// Glorot-uniform weights, zero biases.
ModelParams init_params(const Architecture& arch, Rng& rng);

std::pair<Tensor, ForwardCache> forward(const Architecture& arch,
                                        const ModelParams& params,
                                        const Batch& batch);

struct LossAndGrad {
  double loss = 0.0;   // mean softmax cross-entropy over the batch
  ModelParams grads;   // same shapes as the parameters
};

LossAndGrad loss_and_grad(const Architecture& arch, const ModelParams& params,
                          const Batch& batch);

// Every coordinate becomes param - lr * grad, exactly.
ModelParams sgd_step(const ModelParams& params, const ModelParams& grads,
                     double lr);

struct TrainResult {
  ModelParams params;
  double final_epoch_mean_loss = 0.0;
};

// `epochs` full passes of shuffled mini-batch SGD over the shard; the last
// incomplete mini-batch is kept. Returns the example-mean training loss over
// the final epoch.
TrainResult local_train(const Architecture& arch, const ModelParams& params,
                        const Batch& shard, int epochs, int batch_size,
                        double lr, Rng& rng);

struct EvalResult {
  double mean_loss = 0.0;
  double accuracy = 0.0;  // top-1, ties resolved to the lowest class index
};

EvalResult evaluate(const Architecture& arch, const ModelParams& params,
                    const Batch& data);

}  // namespace fedafd
