#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "edp/tensor.hpp"

namespace edp {

enum class LayerKind { Conv2D, MaxPool2D, Flatten, Dense, ReLU, Softmax };

const char* layer_kind_name(LayerKind kind);

/// One layer of a sequential CNN. Only the fields of the active kind are
/// meaningful; use the factory functions below.
struct LayerSpec {
  LayerKind kind = LayerKind::Flatten;
  int out_channels = 0;  // Conv2D
  int kernel_h = 0;      // Conv2D
  int kernel_w = 0;      // Conv2D
  int stride = 1;        // Conv2D, MaxPool2D
  int window = 0;        // MaxPool2D
  int out_features = 0;  // Dense

  bool has_params() const {
    return kind == LayerKind::Conv2D || kind == LayerKind::Dense;
  }

  bool operator==(const LayerSpec&) const = default;
};

LayerSpec conv2d(int out_channels, int kernel_h, int kernel_w, int stride = 1);
LayerSpec max_pool2d(int window, int stride);
LayerSpec flatten();
LayerSpec dense(int out_features);
LayerSpec relu();
LayerSpec softmax();

/// Weight/bias pair for one layer; both tensors empty for layers without
/// parameters. Conv2D weights have shape (kh, kw, in_c, out_c); Dense
/// weights have shape (in_features, out_features). Bias is (out,).
struct LayerParams {
  Tensor weights;
  Tensor bias;

  bool empty() const { return weights.size() == 0 && bias.size() == 0; }
  Index count() const { return weights.size() + bias.size(); }
};

/// Per-layer parameters in layer order. Used both for the model state and
/// for gradients (which mirror the parameter shapes exactly).
using ParamSet = std::vector<LayerParams>;
using Gradients = ParamSet;

Index param_count(const ParamSet& params);

/// Output shape of `spec` applied to `input`; throws ContractError with the
/// reason when the layer cannot accept the input.
Shape layer_output_shape(const LayerSpec& spec, const Shape& input);

/// (weights shape, bias shape) for a parameterized layer; empty shapes
/// otherwise.
std::pair<Shape, Shape> layer_param_shapes(const LayerSpec& spec,
                                           const Shape& input);

/// Sequential model: layer chain, per-layer parameters, and a per-layer
/// trainable mask. Frozen layers keep their parameters fixed and report
/// zero gradients.
struct Model {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  ParamSet params;
  std::vector<bool> trainable;

  Index layer_count() const { return static_cast<Index>(layers.size()); }
  Index parameter_count() const { return param_count(params); }
  Shape output_shape() const;
  bool same_architecture(const Model& other) const;
};

/// All per-layer outputs of one forward pass, in layer order. `output()`
/// is the final layer's activation (class probabilities for a full model).
struct ActivationRecord {
  Tensor input;
  std::vector<Tensor> outputs;

  const Tensor& output() const { return outputs.back(); }
};

/// Builds a model for `input_shape`, validating the layer chain and
/// initializing every parameter uniform(-s, s) with
/// s = sqrt(6 / (fan_in + fan_out)), deterministically from `seed`.
/// The chain must end in Softmax directly preceded by Dense.
Model build_model(const std::vector<LayerSpec>& specs, const Shape& input_shape,
                  std::uint64_t seed);

ActivationRecord forward(const Model& model, const Tensor& input);

/// In-place variant reusing the record's storage across calls.
void forward_into(const Model& model, const Tensor& input,
                  ActivationRecord& record);

/// Loss for one example: -sum_j [y_j log p_j + (1 - y_j) log(1 - p_j)]
/// with probabilities clamped to [1e-12, 1 - 1e-12].
double cce_loss(const Vec& probs, const Vec& label);

/// Mean of cce_loss over a batch.
double cce_loss_batch(const std::vector<Vec>& probs,
                      const std::vector<Vec>& labels);

/// d(cce_loss)/d(probs) for one example, with the same clamping.
Vec cce_loss_grad(const Vec& probs, const Vec& label);

/// Gradients of cce_loss w.r.t. every parameter, for the single example
/// whose forward pass produced `record`. Frozen layers get zero tensors.
Gradients backward(const Model& model, const ActivationRecord& record,
                   const Vec& label);

/// In-place variant reusing the storage of `out` (must be zero_gradients-
/// shaped); accumulates nothing, overwrites.
void backward_into(const Model& model, const ActivationRecord& record,
                   const Vec& label, Gradients& out);

Gradients zero_gradients(const Model& model);

/// Splits off the classification head: the head starts at the first of the
/// last two parameterized layers and runs to the end; the backbone is
/// everything before it. Composing backbone then head reproduces the full
/// forward pass exactly.
std::pair<Model, Model> split_model(const Model& model);

Vec one_hot(int label, int classes);

}  // namespace edp
