#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plfp/tensor.hpp"

namespace plfp {

enum class LayerKind { conv, relu, maxpool, global_maxpool, linear };

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int c_out = 0;  // conv / linear
  int c_in = 0;   // conv / linear
  int k = 0;      // conv kernel size (odd)
};

// Small sequential network: conv / relu / maxpool(2x2, stride 2) /
// global-maxpool / linear. Convolutions are stride 1, zero-padded to keep
// the spatial size ("same" padding, odd kernels). No biases.
struct ToyModel {
  std::vector<LayerSpec> layers;
  std::vector<Tensor> params;  // aligned with layers; empty for layers without weights
  std::uint64_t seed = 0;
};

// Weight init: uniform in [-1/sqrt(L), 1/sqrt(L)] with L = fan-in per output unit.
ToyModel make_model(std::vector<LayerSpec> layers, std::uint64_t seed);
void validate_model(const ToyModel& m);

// Compact layer-list syntax, e.g. "conv:12:3,relu,pool,conv:24:3,relu,gpool"
// or a trailing "linear:32". The first conv's input channel count is taken
// from `input_channels`.
std::vector<LayerSpec> parse_model_spec(const std::string& text, int input_channels);
std::string model_spec_string(const ToyModel& m);

int embedding_dim(const ToyModel& m);
// Index of the layer whose weights define the embedding dimension
// (the last parameterized layer).
int embedding_layer(const ToyModel& m);
// Conv layers that may be pruned: every conv except the embedding layer.
std::vector<int> prunable_conv_layers(const ToyModel& m);

// input [N,C,H,W] x weights [C_out,C_in,K,K] -> [N,C_out,H,W].
Tensor conv2d_forward(const Tensor& input, const Tensor& weights);

// Multiplies one filter row (output channel / output unit) by gamma in [0,1].
ToyModel scale_filter(const ToyModel& m, int layer, int filter, double gamma);
void scale_filter_inplace(ToyModel& m, int layer, int filter, double gamma);

// Forward pass of a single sample [C,H,W] through all layers; the model must
// end 1-D (global-maxpool, optionally followed by linear layers).
Tensor embed(const ToyModel& m, const Tensor& input);

enum class LossKind { contrastive, triplet };

struct LossSpec {
  LossKind kind = LossKind::triplet;
  double margin = 0.5;
};

LossSpec parse_loss(const std::string& name, double margin);

struct TripletItem {
  Tensor anchor, positive, negative;
};

struct PairItem {
  Tensor a, b;
  int label = 0;  // 1 = same class, 0 = different
};

struct Batch {
  std::vector<TripletItem> triplets;
  std::vector<PairItem> pairs;
  bool empty() const { return triplets.empty() && pairs.empty(); }
  std::size_t size() const { return triplets.size() + pairs.size(); }
};

// loss = y*d^2 + (1-y)*max(0, margin - d)^2 with d = ||a - b||.
double contrastive_loss(const Tensor& a, const Tensor& b, int label, double margin,
                        Tensor* grad_a = nullptr, Tensor* grad_b = nullptr);
// loss = max(0, ||a-p|| - ||a-n|| + margin).
double triplet_loss(const Tensor& a, const Tensor& p, const Tensor& n, double margin,
                    Tensor* grad_a = nullptr, Tensor* grad_p = nullptr, Tensor* grad_n = nullptr);

// Mean batch loss and the gradient of it w.r.t. every parameter tensor.
double batch_gradients(const ToyModel& m, const Batch& batch, const LossSpec& loss,
                       std::vector<Tensor>& grads);

// One plain SGD step over the batch; returns the pre-update batch loss.
double train_step(ToyModel& m, const Batch& batch, const LossSpec& loss, double lr);

void sgd_update(ToyModel& m, const std::vector<Tensor>& grads, double lr);

}  // namespace plfp
