#include "edp/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "edp/errors.hpp"
#include "edp/rng.hpp"

namespace edp {
namespace {

constexpr double kProbClamp = 1e-12;

[[noreturn]] void chain_error(std::size_t layer_index, const LayerSpec& spec,
                              const std::string& reason) {
  throw ContractError("layer " + std::to_string(layer_index) + " (" +
                      layer_kind_name(spec.kind) + "): " + reason);
}

Index conv_out_dim(Index in, int kernel, int stride) {
  return (in - kernel) / stride + 1;
}

// Patch matrix of x (H, W, C): one row per output pixel, one column per
// (ki, kj, c) patch entry, matching the (kh, kw, in_c, out_c) weight layout.
MatrixRM im2col(const Tensor& x, int kh, int kw, int stride) {
  const Index h = x.shape[0], w = x.shape[1], c = x.shape[2];
  const Index oh = conv_out_dim(h, kh, stride);
  const Index ow = conv_out_dim(w, kw, stride);
  MatrixRM patches(oh * ow, static_cast<Index>(kh) * kw * c);
  const double* src = x.data.data();
  for (Index i = 0; i < oh; ++i) {
    for (Index j = 0; j < ow; ++j) {
      double* row = patches.data() + (i * ow + j) * patches.cols();
      for (int ki = 0; ki < kh; ++ki) {
        const double* in_row = src + ((i * stride + ki) * w + j * stride) * c;
        std::copy(in_row, in_row + static_cast<Index>(kw) * c,
                  row + static_cast<Index>(ki) * kw * c);
      }
    }
  }
  return patches;
}

// Scatter-add of a patch-matrix gradient back onto the input image.
void col2im_add(const MatrixRM& dpatches, int kh, int kw, int stride,
                Tensor& dx) {
  const Index h = dx.shape[0], w = dx.shape[1], c = dx.shape[2];
  const Index oh = conv_out_dim(h, kh, stride);
  const Index ow = conv_out_dim(w, kw, stride);
  double* dst = dx.data.data();
  for (Index i = 0; i < oh; ++i) {
    for (Index j = 0; j < ow; ++j) {
      const double* row = dpatches.data() + (i * ow + j) * dpatches.cols();
      for (int ki = 0; ki < kh; ++ki) {
        double* out_row = dst + ((i * stride + ki) * w + j * stride) * c;
        const double* src_row = row + static_cast<Index>(ki) * kw * c;
        for (Index k = 0; k < static_cast<Index>(kw) * c; ++k)
          out_row[k] += src_row[k];
      }
    }
  }
}

void conv2d_forward(const Tensor& x, const LayerSpec& spec,
                    const LayerParams& p, Tensor& out) {
  const Index oh = conv_out_dim(x.shape[0], spec.kernel_h, spec.stride);
  const Index ow = conv_out_dim(x.shape[1], spec.kernel_w, spec.stride);
  const Index cols = static_cast<Index>(spec.kernel_h) * spec.kernel_w *
                     x.shape[2];
  const MatrixRM patches = im2col(x, spec.kernel_h, spec.kernel_w, spec.stride);
  ConstMapRM weights(p.weights.data.data(), cols, spec.out_channels);
  out.shape = {oh, ow, spec.out_channels};
  out.data.resize(oh * ow * spec.out_channels);
  MapRM y(out.data.data(), oh * ow, spec.out_channels);
  y.noalias() = patches * weights;
  y.rowwise() += p.bias.data.transpose();
}

void maxpool_forward(const Tensor& x, const LayerSpec& spec, Tensor& out) {
  const Index h = x.shape[0], w = x.shape[1], c = x.shape[2];
  const Index oh = conv_out_dim(h, spec.window, spec.stride);
  const Index ow = conv_out_dim(w, spec.window, spec.stride);
  out.shape = {oh, ow, c};
  out.data.resize(oh * ow * c);
  const double* src = x.data.data();
  double* dst = out.data.data();
  for (Index i = 0; i < oh; ++i) {
    for (Index j = 0; j < ow; ++j) {
      for (Index ch = 0; ch < c; ++ch) {
        double best = src[((i * spec.stride) * w + j * spec.stride) * c + ch];
        for (int ki = 0; ki < spec.window; ++ki) {
          for (int kj = 0; kj < spec.window; ++kj) {
            const double v =
                src[((i * spec.stride + ki) * w + j * spec.stride + kj) * c +
                    ch];
            best = std::max(best, v);
          }
        }
        dst[(i * ow + j) * c + ch] = best;
      }
    }
  }
}

// Gradient routing to the first maximum in scan order; ties are broken
// deterministically.
void maxpool_backward(const Tensor& x, const LayerSpec& spec, const Vec& dout,
                      const Shape& out_shape, Vec& dx) {
  const Index h = x.shape[0], w = x.shape[1], c = x.shape[2];
  const Index oh = out_shape[0], ow = out_shape[1];
  dx.setZero(x.size());
  const double* src = x.data.data();
  for (Index i = 0; i < oh; ++i) {
    for (Index j = 0; j < ow; ++j) {
      for (Index ch = 0; ch < c; ++ch) {
        Index best_idx = ((i * spec.stride) * w + j * spec.stride) * c + ch;
        double best = src[best_idx];
        for (int ki = 0; ki < spec.window; ++ki) {
          for (int kj = 0; kj < spec.window; ++kj) {
            const Index idx =
                ((i * spec.stride + ki) * w + j * spec.stride + kj) * c + ch;
            if (src[idx] > best) {
              best = src[idx];
              best_idx = idx;
            }
          }
        }
        dx[best_idx] += dout[(i * ow + j) * c + ch];
      }
    }
  }
}

void softmax_forward(const Vec& z, Vec& out) {
  const double zmax = z.maxCoeff();
  out = (z.array() - zmax).exp();
  out /= out.sum();
}

void validate_spec_fields(std::size_t i, const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::Conv2D:
      if (spec.out_channels < 1 || spec.kernel_h < 1 || spec.kernel_w < 1 ||
          spec.stride < 1)
        chain_error(i, spec, "channels, kernel dims and stride must be >= 1");
      break;
    case LayerKind::MaxPool2D:
      if (spec.window < 1 || spec.stride < 1)
        chain_error(i, spec, "window and stride must be >= 1");
      break;
    case LayerKind::Dense:
      if (spec.out_features < 1)
        chain_error(i, spec, "out_features must be >= 1");
      break;
    default:
      break;
  }
}

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::MaxPool2D: return "MaxPool2D";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::Dense: return "Dense";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::Softmax: return "Softmax";
  }
  return "?";
}

LayerSpec conv2d(int out_channels, int kernel_h, int kernel_w, int stride) {
  LayerSpec s;
  s.kind = LayerKind::Conv2D;
  s.out_channels = out_channels;
  s.kernel_h = kernel_h;
  s.kernel_w = kernel_w;
  s.stride = stride;
  return s;
}

LayerSpec max_pool2d(int window, int stride) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool2D;
  s.window = window;
  s.stride = stride;
  return s;
}

LayerSpec flatten() {
  LayerSpec s;
  s.kind = LayerKind::Flatten;
  return s;
}

LayerSpec dense(int out_features) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.out_features = out_features;
  return s;
}

LayerSpec relu() {
  LayerSpec s;
  s.kind = LayerKind::ReLU;
  return s;
}

LayerSpec softmax() {
  LayerSpec s;
  s.kind = LayerKind::Softmax;
  return s;
}

Index param_count(const ParamSet& params) {
  Index n = 0;
  for (const auto& p : params) n += p.count();
  return n;
}

Shape layer_output_shape(const LayerSpec& spec, const Shape& input) {
  switch (spec.kind) {
    case LayerKind::Conv2D: {
      if (input.size() != 3)
        throw ContractError("Conv2D expects rank-3 input, got rank " +
                            std::to_string(input.size()));
      if (input[0] < spec.kernel_h || input[1] < spec.kernel_w)
        throw ContractError("Conv2D kernel " + std::to_string(spec.kernel_h) +
                            "x" + std::to_string(spec.kernel_w) +
                            " larger than input " + shape_str(input));
      return {conv_out_dim(input[0], spec.kernel_h, spec.stride),
              conv_out_dim(input[1], spec.kernel_w, spec.stride),
              spec.out_channels};
    }
    case LayerKind::MaxPool2D: {
      if (input.size() != 3)
        throw ContractError("MaxPool2D expects rank-3 input, got rank " +
                            std::to_string(input.size()));
      if (input[0] < spec.window || input[1] < spec.window)
        throw ContractError("MaxPool2D window larger than input " +
                            shape_str(input));
      return {conv_out_dim(input[0], spec.window, spec.stride),
              conv_out_dim(input[1], spec.window, spec.stride), input[2]};
    }
    case LayerKind::Flatten:
      return {numel(input)};
    case LayerKind::Dense:
      if (input.size() != 1)
        throw ContractError("Dense expects rank-1 input, got shape " +
                            shape_str(input));
      return {spec.out_features};
    case LayerKind::ReLU:
      return input;
    case LayerKind::Softmax:
      if (input.size() != 1)
        throw ContractError("Softmax expects rank-1 input, got shape " +
                            shape_str(input));
      return input;
  }
  throw ContractError("unknown layer kind");
}

std::pair<Shape, Shape> layer_param_shapes(const LayerSpec& spec,
                                           const Shape& input) {
  switch (spec.kind) {
    case LayerKind::Conv2D:
      return {{spec.kernel_h, spec.kernel_w, input[2], spec.out_channels},
              {spec.out_channels}};
    case LayerKind::Dense:
      return {{input[0], spec.out_features}, {spec.out_features}};
    default:
      return {{}, {}};
  }
}

Shape Model::output_shape() const {
  Shape s = input_shape;
  for (const auto& layer : layers) s = layer_output_shape(layer, s);
  return s;
}

bool Model::same_architecture(const Model& other) const {
  return input_shape == other.input_shape && layers == other.layers;
}

Model build_model(const std::vector<LayerSpec>& specs, const Shape& input_shape,
                  std::uint64_t seed) {
  if (specs.empty()) throw ContractError("build_model: empty layer chain");
  if (specs.back().kind != LayerKind::Softmax)
    chain_error(specs.size() - 1, specs.back(),
                "model must end with Softmax");
  if (specs.size() < 2 || specs[specs.size() - 2].kind != LayerKind::Dense)
    chain_error(specs.size() - 2,
                specs.size() < 2 ? specs.back() : specs[specs.size() - 2],
                "Softmax must be preceded by Dense");

  Model m;
  m.input_shape = input_shape;
  m.layers = specs;
  m.params.resize(specs.size());
  m.trainable.assign(specs.size(), true);

  RngStream rng = RngStream(seed).fork("params");
  Shape shape = input_shape;
  numel(shape);  // validates positivity
  for (std::size_t i = 0; i < specs.size(); ++i) {
    validate_spec_fields(i, specs[i]);
    Shape out;
    try {
      out = layer_output_shape(specs[i], shape);
    } catch (const ContractError& e) {
      chain_error(i, specs[i], e.what());
    }
    if (specs[i].has_params()) {
      const auto [wshape, bshape] = layer_param_shapes(specs[i], shape);
      Index fan_in = 0, fan_out = 0;
      if (specs[i].kind == LayerKind::Conv2D) {
        fan_in = static_cast<Index>(specs[i].kernel_h) * specs[i].kernel_w *
                 shape[2];
        fan_out = static_cast<Index>(specs[i].kernel_h) * specs[i].kernel_w *
                  specs[i].out_channels;
      } else {
        fan_in = shape[0];
        fan_out = specs[i].out_features;
      }
      const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      Tensor w(wshape), b(bshape);
      for (Index k = 0; k < w.size(); ++k)
        w.data[k] = s * (2.0 * rng.uniform() - 1.0);
      for (Index k = 0; k < b.size(); ++k)
        b.data[k] = s * (2.0 * rng.uniform() - 1.0);
      m.params[i] = LayerParams{std::move(w), std::move(b)};
    }
    shape = std::move(out);
  }
  return m;
}

namespace {

void apply_layer(const Model& model, std::size_t i, const Tensor& x,
                 Tensor& out) {
  const LayerSpec& spec = model.layers[i];
  switch (spec.kind) {
    case LayerKind::Conv2D:
      conv2d_forward(x, spec, model.params[i], out);
      break;
    case LayerKind::MaxPool2D:
      maxpool_forward(x, spec, out);
      break;
    case LayerKind::Flatten:
      out.shape = {x.size()};
      out.data = x.data;
      break;
    case LayerKind::Dense: {
      const LayerParams& p = model.params[i];
      ConstMapRM w(p.weights.data.data(), x.size(), spec.out_features);
      out.shape = {spec.out_features};
      out.data.noalias() = w.transpose() * x.data;
      out.data += p.bias.data;
      break;
    }
    case LayerKind::ReLU:
      out.shape = x.shape;
      out.data = x.data.cwiseMax(0.0);
      break;
    case LayerKind::Softmax:
      out.shape = x.shape;
      softmax_forward(x.data, out.data);
      break;
  }
}

}  // namespace

void forward_into(const Model& model, const Tensor& input,
                  ActivationRecord& record) {
  if (input.shape != model.input_shape)
    throw ContractError("forward: input shape " + shape_str(input.shape) +
                        " does not match model input " +
                        shape_str(model.input_shape));
  record.input = input;
  record.outputs.resize(model.layers.size());
  const Tensor* x = &record.input;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    apply_layer(model, i, *x, record.outputs[i]);
    if (!record.outputs[i].finite())
      throw NumericError("forward: non-finite output at layer " +
                         std::to_string(i) + " (" +
                         layer_kind_name(model.layers[i].kind) + ")");
    x = &record.outputs[i];
  }
}

ActivationRecord forward(const Model& model, const Tensor& input) {
  ActivationRecord record;
  forward_into(model, input, record);
  return record;
}

double cce_loss(const Vec& probs, const Vec& label) {
  if (probs.size() != label.size())
    throw ContractError("cce_loss: probs length " +
                        std::to_string(probs.size()) + " vs label length " +
                        std::to_string(label.size()));
  if (std::abs(probs.sum() - 1.0) > 1e-6)
    throw ContractError("cce_loss: probabilities must sum to 1");
  double ones = 0;
  for (Index j = 0; j < label.size(); ++j) {
    if (label[j] != 0.0 && label[j] != 1.0)
      throw ContractError("cce_loss: label must be one-hot");
    ones += label[j];
  }
  if (ones != 1.0) throw ContractError("cce_loss: label must be one-hot");

  double loss = 0.0;
  for (Index j = 0; j < probs.size(); ++j) {
    const double p = std::clamp(probs[j], kProbClamp, 1.0 - kProbClamp);
    // 0 * log 0 := 0, so the vanished-coefficient terms are skipped.
    if (label[j] != 0.0) loss -= label[j] * std::log(p);
    if (label[j] != 1.0) loss -= (1.0 - label[j]) * std::log(1.0 - p);
  }
  return loss;
}

double cce_loss_batch(const std::vector<Vec>& probs,
                      const std::vector<Vec>& labels) {
  if (probs.empty() || probs.size() != labels.size())
    throw ContractError("cce_loss_batch: batch must be non-empty and aligned");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    total += cce_loss(probs[i], labels[i]);
  return total / static_cast<double>(probs.size());
}

Vec cce_loss_grad(const Vec& probs, const Vec& label) {
  Vec g = Vec::Zero(probs.size());
  for (Index j = 0; j < probs.size(); ++j) {
    const double p = probs[j];
    if (p < kProbClamp || p > 1.0 - kProbClamp) continue;  // clamped flat
    g[j] = -label[j] / p + (1.0 - label[j]) / (1.0 - p);
  }
  return g;
}

Gradients zero_gradients(const Model& model) {
  Gradients g(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (!model.params[i].empty()) {
      g[i].weights = Tensor(model.params[i].weights.shape);
      g[i].bias = Tensor(model.params[i].bias.shape);
    }
  }
  return g;
}

void backward_into(const Model& model, const ActivationRecord& record,
                   const Vec& label, Gradients& out) {
  const std::size_t n = model.layers.size();
  if (record.outputs.size() != n)
    throw ContractError("backward: record does not match model");
  if (out.size() != n) throw ContractError("backward: gradient shape mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (!model.params[i].empty()) {
      out[i].weights.shape = model.params[i].weights.shape;
      out[i].bias.shape = model.params[i].bias.shape;
      out[i].weights.data.setZero(model.params[i].weights.size());
      out[i].bias.data.setZero(model.params[i].bias.size());
    }
  }

  Vec d = cce_loss_grad(record.output().data, label);
  Vec dprev;
  for (std::size_t ri = n; ri-- > 0;) {
    const LayerSpec& spec = model.layers[ri];
    const Tensor& x = ri == 0 ? record.input : record.outputs[ri - 1];
    const Tensor& y = record.outputs[ri];
    if (static_cast<Index>(d.size()) != y.size())
      throw ContractError("backward: record does not match model");
    switch (spec.kind) {
      case LayerKind::Softmax: {
        const double dot = d.dot(y.data);
        dprev = (y.data.array() * (d.array() - dot)).matrix();
        break;
      }
      case LayerKind::Dense: {
        const LayerParams& p = model.params[ri];
        if (model.trainable[ri]) {
          MapRM dw(out[ri].weights.data.data(), x.size(), spec.out_features);
          dw.noalias() = x.data * d.transpose();
          out[ri].bias.data = d;
        }
        ConstMapRM w(p.weights.data.data(), x.size(), spec.out_features);
        dprev.noalias() = w * d;
        break;
      }
      case LayerKind::ReLU:
        dprev = (x.data.array() > 0.0).select(d.array(), 0.0).matrix();
        break;
      case LayerKind::Flatten:
        dprev = d;
        break;
      case LayerKind::MaxPool2D:
        maxpool_backward(x, spec, d, y.shape, dprev);
        break;
      case LayerKind::Conv2D: {
        const LayerParams& p = model.params[ri];
        const Index cols = static_cast<Index>(spec.kernel_h) * spec.kernel_w *
                           x.shape[2];
        const MatrixRM patches =
            im2col(x, spec.kernel_h, spec.kernel_w, spec.stride);
        ConstMapRM dy(d.data(), patches.rows(), spec.out_channels);
        if (model.trainable[ri]) {
          MapRM dw(out[ri].weights.data.data(), cols, spec.out_channels);
          dw.noalias() = patches.transpose() * dy;
          out[ri].bias.data = dy.colwise().sum();
        }
        ConstMapRM w(p.weights.data.data(), cols, spec.out_channels);
        MatrixRM dpatches(patches.rows(), cols);
        dpatches.noalias() = dy * w.transpose();
        Tensor dx(x.shape);
        col2im_add(dpatches, spec.kernel_h, spec.kernel_w, spec.stride, dx);
        dprev = std::move(dx.data);
        break;
      }
    }
    d = std::move(dprev);
  }
}

Gradients backward(const Model& model, const ActivationRecord& record,
                   const Vec& label) {
  Gradients g = zero_gradients(model);
  backward_into(model, record, label, g);
  return g;
}

std::pair<Model, Model> split_model(const Model& model) {
  std::vector<std::size_t> param_layers;
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    if (model.layers[i].has_params()) param_layers.push_back(i);
  if (param_layers.size() < 2)
    throw ContractError(
        "split_model: need at least two parameterized layers");
  const std::size_t head_start = param_layers[param_layers.size() - 2];
  if (head_start == 0)
    throw ContractError("split_model: backbone would be empty");

  Model backbone;
  backbone.input_shape = model.input_shape;
  Model head;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    Model& dst = i < head_start ? backbone : head;
    dst.layers.push_back(model.layers[i]);
    dst.params.push_back(model.params[i]);
    dst.trainable.push_back(model.trainable[i]);
  }
  const Shape cut = backbone.output_shape();
  if (cut.size() != 1)
    throw ContractError("split_model: cut-point output must be rank-1, got " +
                        shape_str(cut));
  head.input_shape = cut;
  return {std::move(backbone), std::move(head)};
}

Vec one_hot(int label, int classes) {
  if (label < 0 || label >= classes)
    throw ContractError("one_hot: label out of range");
  Vec v = Vec::Zero(classes);
  v[label] = 1.0;
  return v;
}

}  // namespace edp
