#include "thinner/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "thinner/error.hpp"
#include "thinner/random.hpp"

namespace thinner {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2D: return "conv2d";
    case LayerKind::kDense: return "dense";
    case LayerKind::kReLU: return "relu";
    case LayerKind::kMaxPool2D: return "maxpool2d";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kSoftmaxCrossEntropy: return "softmax";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& text) {
  for (LayerKind k : {LayerKind::kConv2D, LayerKind::kDense, LayerKind::kReLU,
                      LayerKind::kMaxPool2D, LayerKind::kFlatten,
                      LayerKind::kSoftmaxCrossEntropy}) {
    if (to_string(k) == text) return k;
  }
  throw ValueError("unknown layer kind: " + text);
}

std::size_t Layer::width() const {
  if (!parameterized()) throw ValueError("layer " + name + " has no width");
  return kind == LayerKind::kConv2D ? weights().dim(0) : weights().dim(1);
}

std::size_t Layer::input_width() const {
  if (!parameterized()) throw ValueError("layer " + name + " has no input width");
  return kind == LayerKind::kConv2D ? weights().dim(1) : weights().dim(0);
}

namespace {

[[noreturn]] void shape_fail(const Model& model, std::size_t index, const std::string& why) {
  throw ShapeError("layer " + std::to_string(index) + " (" + model.layers[index].name + ", " +
                   to_string(model.layers[index].kind) + "): " + why);
}

void check_params(const Model& model, std::size_t index) {
  const Layer& layer = model.layers[index];
  const std::size_t expected = layer.parameterized() ? 2 : 0;
  if (layer.params.size() != expected) shape_fail(model, index, "wrong parameter count");
  if (!expected) return;
  const std::size_t weight_rank = layer.kind == LayerKind::kConv2D ? 4 : 2;
  if (layer.weights().rank() != weight_rank) shape_fail(model, index, "bad weight rank");
  if (layer.bias().rank() != 1 || layer.bias().dim(0) != layer.width()) {
    shape_fail(model, index, "bias shape " + shape_to_string(layer.bias().shape()) +
                                 " does not match width " + std::to_string(layer.width()));
  }
}

}  // namespace

std::vector<Shape> layer_output_shapes(const Model& model) {
  if (model.input_shape.size() != 3) {
    throw ShapeError("model input shape must be c x h x w, got " +
                     shape_to_string(model.input_shape));
  }
  std::vector<Shape> out;
  out.reserve(model.layers.size());
  Shape current = model.input_shape;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    check_params(model, i);
    const std::string got = "input " + shape_to_string(current);
    switch (layer.kind) {
      case LayerKind::kConv2D: {
        if (current.size() != 3) shape_fail(model, i, "needs a c x h x w " + got);
        const Tensor& f = layer.weights();
        if (f.dim(1) != current[0]) {
          shape_fail(model, i, "filters " + shape_to_string(f.shape()) + " do not match " + got);
        }
        if (f.dim(2) > current[1] + 2 * layer.padding ||
            f.dim(3) > current[2] + 2 * layer.padding) {
          shape_fail(model, i, "kernel larger than padded " + got);
        }
        if (layer.stride == 0) shape_fail(model, i, "stride must be positive");
        current = {f.dim(0), conv_output_extent(current[1], f.dim(2), layer.stride, layer.padding),
                   conv_output_extent(current[2], f.dim(3), layer.stride, layer.padding)};
        break;
      }
      case LayerKind::kDense:
        if (current.size() != 1 || current[0] != layer.input_width()) {
          shape_fail(model, i, "weights " + shape_to_string(layer.weights().shape()) +
                                   " do not match " + got);
        }
        current = {layer.width()};
        break;
      case LayerKind::kReLU:
        break;
      case LayerKind::kMaxPool2D:
        if (current.size() != 3) shape_fail(model, i, "needs a c x h x w " + got);
        if (layer.pool == 0 || current[1] < layer.pool || current[2] < layer.pool) {
          shape_fail(model, i, "pool size " + std::to_string(layer.pool) + " does not fit " + got);
        }
        current = {current[0], current[1] / layer.pool, current[2] / layer.pool};
        break;
      case LayerKind::kFlatten:
        current = {shape_size(current)};
        break;
      case LayerKind::kSoftmaxCrossEntropy:
        if (current.size() != 1) shape_fail(model, i, "needs a vector " + got);
        if (i + 1 != model.layers.size()) shape_fail(model, i, "must be the last layer");
        break;
    }
    out.push_back(current);
  }
  return out;
}

void validate(const Model& model) {
  const auto shapes = layer_output_shapes(model);
  if (shapes.empty() || shapes.back().size() != 1) {
    throw ShapeError("model must end in a vector of logits");
  }
  std::optional<std::size_t> last_param;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (model.layers[i].parameterized()) last_param = i;
  }
  for (std::size_t k = 0; k < model.prunable.size(); ++k) {
    const std::size_t idx = model.prunable[k];
    if (idx >= model.layers.size() || !model.layers[idx].parameterized()) {
      throw ValueError("prunable index " + std::to_string(idx) + " is not a conv/dense layer");
    }
    if (idx == last_param) throw ValueError("the output layer cannot be prunable");
    if (k > 0 && model.prunable[k - 1] >= idx) {
      throw ValueError("prunable indices must be strictly increasing");
    }
  }
}

std::size_t num_classes(const Model& model) { return layer_output_shapes(model).back().at(0); }

std::size_t parameter_count(const Model& model) {
  std::size_t total = 0;
  for (const Layer& layer : model.layers)
    for (const Tensor& p : layer.params) total += p.size();
  return total;
}

std::size_t prunable_neuron_count(const Model& model) {
  std::size_t total = 0;
  for (std::size_t idx : model.prunable) total += model.layers.at(idx).width();
  return total;
}

std::optional<std::size_t> next_parameterized(const Model& model, std::size_t layer) {
  for (std::size_t i = layer + 1; i < model.layers.size(); ++i) {
    if (model.layers[i].parameterized()) return i;
  }
  return std::nullopt;
}

Model init_model(const Shape& input_shape, const std::vector<LayerSpec>& specs,
                 std::uint64_t seed) {
  Model model;
  model.input_shape = input_shape;
  Rng rng(seed);
  std::map<LayerKind, int> counters;
  Shape current = input_shape;
  std::optional<std::size_t> last_param;
  for (const LayerSpec& spec : specs) {
    Layer layer;
    layer.kind = spec.kind;
    layer.stride = spec.stride;
    layer.padding = spec.padding;
    layer.pool = spec.pool;
    const int ordinal = ++counters[spec.kind];
    static const std::map<LayerKind, std::string> prefixes = {
        {LayerKind::kConv2D, "conv"},     {LayerKind::kDense, "fc"},
        {LayerKind::kReLU, "relu"},       {LayerKind::kMaxPool2D, "pool"},
        {LayerKind::kFlatten, "flatten"}, {LayerKind::kSoftmaxCrossEntropy, "softmax"}};
    layer.name = spec.name.empty() ? prefixes.at(spec.kind) + std::to_string(ordinal) : spec.name;
    if (layer.name.find_first_of(" \t\n") != std::string::npos) {
      throw ValueError("layer names may not contain whitespace: '" + layer.name + "'");
    }

    if (layer.parameterized()) {
      if (spec.units == 0) throw ValueError("layer " + layer.name + " needs units >= 1");
      Shape wshape;
      std::size_t fan_in = 0;
      if (spec.kind == LayerKind::kConv2D) {
        if (current.size() != 3) {
          throw ShapeError("layer " + layer.name + " needs a c x h x w input, got " +
                           shape_to_string(current));
        }
        if (spec.kernel == 0) throw ValueError("layer " + layer.name + " needs kernel >= 1");
        wshape = {spec.units, current[0], spec.kernel, spec.kernel};
        fan_in = current[0] * spec.kernel * spec.kernel;
      } else {
        if (current.size() != 1) {
          throw ShapeError("layer " + layer.name + " needs a flat input, got " +
                           shape_to_string(current) + " (insert a flatten layer)");
        }
        wshape = {current[0], spec.units};
        fan_in = current[0];
      }
      Tensor w(wshape);
      const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (double& v : w.data()) v = scale * rng.normal();
      layer.params = {std::move(w), Tensor({spec.units})};
      last_param = model.layers.size();
    }
    model.layers.push_back(std::move(layer));
    current = layer_output_shapes(model).back();
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (model.layers[i].parameterized() && i != last_param) model.prunable.push_back(i);
  }
  validate(model);
  return model;
}

ParamTensors zeros_like_params(const Model& model) {
  ParamTensors out(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    for (const Tensor& p : model.layers[i].params) out[i].emplace_back(p.shape());
  }
  return out;
}

namespace {

Shape batched(std::size_t b, const Shape& sample) {
  Shape s{b};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

// Per-layer state kept by a forward pass for the backward pass.
struct Trace {
  std::vector<Tensor> inputs;                         // batch input of each layer
  std::vector<std::vector<Tensor>> conv_cols;         // im2col per sample
  std::vector<std::vector<std::size_t>> pool_argmax;  // flat input index per output
};

Tensor conv_forward_batch(const Layer& layer, const Tensor& x, const Shape& out_sample,
                          std::vector<Tensor>* cols_out) {
  const std::size_t b = x.dim(0);
  const Tensor& f = layer.weights();
  const std::size_t c_out = f.dim(0);
  const Tensor w2 = reshape(f, {c_out, f.size() / c_out});
  const ConvGeometry geom{f.dim(2), f.dim(3), layer.stride, layer.padding};
  const Shape in_sample{x.dim(1), x.dim(2), x.dim(3)};
  const std::size_t in_size = shape_size(in_sample);
  const std::size_t out_size = shape_size(out_sample);
  const std::size_t area = out_size / c_out;
  Tensor y(batched(b, out_sample));
  for (std::size_t s = 0; s < b; ++s) {
    Tensor xs(in_sample, std::vector<double>(x.data().begin() + s * in_size,
                                             x.data().begin() + (s + 1) * in_size));
    Tensor cols = im2col(xs, geom);
    const Tensor ys = matmul(w2, cols);
    double* dst = y.data().data() + s * out_size;
    for (std::size_t c = 0; c < c_out; ++c) {
      const double bias = layer.bias()[c];
      for (std::size_t p = 0; p < area; ++p) dst[c * area + p] = ys[c * area + p] + bias;
    }
    if (cols_out) cols_out->push_back(std::move(cols));
  }
  return y;
}

Tensor dense_forward_batch(const Layer& layer, const Tensor& x) {
  Tensor y = matmul(x, layer.weights());
  const std::size_t n = y.dim(1);
  for (std::size_t s = 0; s < y.dim(0); ++s)
    for (std::size_t j = 0; j < n; ++j) y[s * n + j] += layer.bias()[j];
  return y;
}

Tensor maxpool_forward_batch(const Layer& layer, const Tensor& x, const Shape& out_sample,
                             std::vector<std::size_t>* argmax) {
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = out_sample[1], ow = out_sample[2], p = layer.pool;
  Tensor y(batched(b, out_sample));
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t o = 0;
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (s * c + ch) * h * w;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
          std::size_t best = base + (oy * p) * w + ox * p;
          for (std::size_t dy = 0; dy < p; ++dy) {
            for (std::size_t dx = 0; dx < p; ++dx) {
              const std::size_t idx = base + (oy * p + dy) * w + ox * p + dx;
              if (x[idx] > x[best]) best = idx;
            }
          }
          y[o] = x[best];
          if (argmax) (*argmax)[o] = best;
        }
      }
    }
  }
  return y;
}

Tensor run_forward(const Model& model, const Tensor& batch, Trace* trace,
                   std::map<std::size_t, Tensor>* activations) {
  const auto shapes = layer_output_shapes(model);
  if (batch.rank() != 4 || Shape(batch.shape().begin() + 1, batch.shape().end()) !=
                               model.input_shape) {
    throw ShapeError("batch " + shape_to_string(batch.shape()) +
                     " does not match model input " + shape_to_string(model.input_shape));
  }
  const std::size_t b = batch.dim(0);
  if (trace) {
    trace->inputs.clear();
    trace->conv_cols.assign(model.layers.size(), {});
    trace->pool_argmax.assign(model.layers.size(), {});
  }
  Tensor x = batch;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    if (trace) trace->inputs.push_back(x);
    switch (layer.kind) {
      case LayerKind::kConv2D:
        x = conv_forward_batch(layer, x, shapes[i], trace ? &trace->conv_cols[i] : nullptr);
        break;
      case LayerKind::kDense:
        x = dense_forward_batch(layer, x);
        break;
      case LayerKind::kReLU:
        for (double& v : x.data()) v = v > 0.0 ? v : 0.0;
        break;
      case LayerKind::kMaxPool2D:
        x = maxpool_forward_batch(layer, x, shapes[i], trace ? &trace->pool_argmax[i] : nullptr);
        break;
      case LayerKind::kFlatten:
        x = reshape(x, batched(b, shapes[i]));
        break;
      case LayerKind::kSoftmaxCrossEntropy:
        break;
    }
    if (activations &&
        std::find(model.prunable.begin(), model.prunable.end(), i) != model.prunable.end()) {
      activations->emplace(i, x);
    }
  }
  return x;
}

void check_labels(std::span<const int> labels, std::size_t batch, std::size_t classes) {
  if (labels.size() != batch) {
    throw ValueError("got " + std::to_string(labels.size()) + " labels for a batch of " +
                     std::to_string(batch));
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ValueError("label " + std::to_string(label) + " out of range [0, " +
                       std::to_string(classes) + ")");
    }
  }
}

}  // namespace

ForwardResult forward(const Model& model, const Tensor& batch, bool record_activations) {
  ForwardResult result{Tensor({1}), {}};
  result.logits = run_forward(model, batch, nullptr,
                              record_activations ? &result.activations : nullptr);
  return result;
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_labels(labels, logits.dim(0), logits.dim(1));
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::size_t s = 0; s < b; ++s) {
    const double* z = logits.data().data() + s * k;
    const double m = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - m);
    total += m + std::log(sum) - z[labels[s]];
  }
  return total / static_cast<double>(b);
}

BackwardResult backward(const Model& model, const Tensor& batch, std::span<const int> labels) {
  Trace trace;
  const Tensor logits = run_forward(model, batch, &trace, nullptr);
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  check_labels(labels, b, k);

  BackwardResult result{0.0, zeros_like_params(model), Tensor({1})};
  Tensor grad(logits.shape());
  double total = 0.0;
  for (std::size_t s = 0; s < b; ++s) {
    const double* z = logits.data().data() + s * k;
    const double m = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - m);
    const double lse = m + std::log(sum);
    total += lse - z[labels[s]];
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(z[j] - lse);
      grad[s * k + j] = (p - (static_cast<std::size_t>(labels[s]) == j ? 1.0 : 0.0)) /
                        static_cast<double>(b);
    }
  }
  result.loss = total / static_cast<double>(b);

  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const Layer& layer = model.layers[li];
    const Tensor& x = trace.inputs[li];
    switch (layer.kind) {
      case LayerKind::kSoftmaxCrossEntropy:
        break;
      case LayerKind::kFlatten:
        grad = reshape(grad, x.shape());
        break;
      case LayerKind::kReLU:
        for (std::size_t i = 0; i < grad.size(); ++i) {
          if (!(x[i] > 0.0)) grad[i] = 0.0;
        }
        break;
      case LayerKind::kMaxPool2D: {
        Tensor dx(x.shape());
        const auto& argmax = trace.pool_argmax[li];
        for (std::size_t o = 0; o < grad.size(); ++o) dx[argmax[o]] += grad[o];
        grad = std::move(dx);
        break;
      }
      case LayerKind::kDense: {
        Tensor& dw = result.gradients[li][0];
        Tensor& db = result.gradients[li][1];
        dw = matmul(transpose(x), grad);
        const std::size_t n = grad.dim(1);
        for (std::size_t s = 0; s < b; ++s)
          for (std::size_t j = 0; j < n; ++j) db[j] += grad[s * n + j];
        grad = matmul(grad, transpose(layer.weights()));
        break;
      }
      case LayerKind::kConv2D: {
        const Tensor& f = layer.weights();
        const std::size_t c_out = f.dim(0);
        const std::size_t cols_rows = f.size() / c_out;
        const Tensor w2t = transpose(reshape(f, {c_out, cols_rows}));
        const ConvGeometry geom{f.dim(2), f.dim(3), layer.stride, layer.padding};
        const std::size_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const std::size_t area = grad.size() / (b * c_out);
        Tensor dw2({c_out, cols_rows});
        Tensor& db = result.gradients[li][1];
        Tensor dx(x.shape());
        for (std::size_t s = 0; s < b; ++s) {
          Tensor gs({c_out, area}, std::vector<double>(grad.data().begin() + s * c_out * area,
                                                       grad.data().begin() +
                                                           (s + 1) * c_out * area));
          for (std::size_t ch = 0; ch < c_out; ++ch)
            for (std::size_t p = 0; p < area; ++p) db[ch] += gs[ch * area + p];
          dw2 = add(dw2, matmul(gs, transpose(trace.conv_cols[li][s])));
          const Tensor dxs = col2im(matmul(w2t, gs), c, h, w, geom);
          std::copy(dxs.data().begin(), dxs.data().end(),
                    dx.data().begin() + static_cast<std::ptrdiff_t>(s * dxs.size()));
        }
        result.gradients[li][0] = reshape(dw2, f.shape());
        grad = std::move(dx);
        break;
      }
    }
  }
  result.input_gradient = std::move(grad);
  return result;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValueError("learning_rate must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValueError("momentum must be in [0, 1)");
  if (batch_size == 0) throw ValueError("batch_size must be positive");
}

namespace {

void check_like_params(const Model& model, const ParamTensors& tensors, const char* what) {
  if (tensors.size() != model.layers.size()) {
    throw ShapeError(std::string(what) + " do not match the model's layer count");
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& params = model.layers[i].params;
    if (tensors[i].size() != params.size()) {
      throw ShapeError(std::string(what) + " for layer " + model.layers[i].name +
                       " have the wrong tensor count");
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
      if (tensors[i][p].shape() != params[p].shape()) {
        throw ShapeError(std::string(what) + " shape " + shape_to_string(tensors[i][p].shape()) +
                         " does not match parameter " + shape_to_string(params[p].shape()) +
                         " of layer " + model.layers[i].name);
      }
    }
  }
}

}  // namespace

void sgd_step(Model& model, const ParamTensors& gradients, const TrainConfig& config,
              ParamTensors& velocity) {
  check_like_params(model, gradients, "gradients");
  check_like_params(model, velocity, "velocity");
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    for (std::size_t p = 0; p < model.layers[i].params.size(); ++p) {
      auto param = model.layers[i].params[p].data();
      auto vel = velocity[i][p].data();
      const auto g = gradients[i][p].data();
      for (std::size_t j = 0; j < param.size(); ++j) {
        vel[j] = config.momentum * vel[j] - config.learning_rate * g[j];
        param[j] += vel[j];
      }
    }
  }
}

namespace {

void apply_mask(ParamTensors& tensors, const ParamMask& mask) {
  for (std::size_t i = 0; i < tensors.size(); ++i)
    for (std::size_t p = 0; p < tensors[i].size(); ++p)
      tensors[i][p] = mul(tensors[i][p], mask[i][p]);
}

void apply_mask(Model& model, const ParamMask& mask) {
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    for (std::size_t p = 0; p < model.layers[i].params.size(); ++p)
      model.layers[i].params[p] = mul(model.layers[i].params[p], mask[i][p]);
}

void check_dataset(const Model& model, const Dataset& data) {
  if (data.size() == 0) throw ValueError("dataset is empty");
  if (data.sample_shape() != model.input_shape) {
    throw ShapeError("dataset samples " + shape_to_string(data.sample_shape()) +
                     " do not match model input " + shape_to_string(model.input_shape));
  }
}

}  // namespace

TrainResult train(Model& model, const Dataset& data, const TrainConfig& config,
                  const ParamMask* mask, const std::function<void(const EpochStats&)>& on_epoch) {
  config.validate();
  check_dataset(model, data);
  if (mask) {
    check_like_params(model, *mask, "mask");
    apply_mask(model, *mask);
  }
  TrainResult result;
  ParamTensors velocity = zeros_like_params(model);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (const auto& idx : batches(data.size(), config.batch_size, mix64(config.seed + epoch))) {
      const auto [images, labels] = gather(data, idx);
      BackwardResult step = backward(model, images, labels);
      if (mask) apply_mask(step.gradients, *mask);
      sgd_step(model, step.gradients, config, velocity);
      loss_sum += step.loss * static_cast<double>(idx.size());
    }
    const double mean_loss = loss_sum / static_cast<double>(data.size());
    result.loss_history.push_back(mean_loss);
    if (on_epoch) on_epoch(EpochStats{epoch, mean_loss});
  }
  return result;
}

double evaluate(const Model& model, const Dataset& data) {
  check_dataset(model, data);
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + kChunk); ++i) idx.push_back(i);
    const auto [images, labels] = gather(data, idx);
    const Tensor logits = forward(model, images).logits;
    const std::size_t k = logits.dim(1);
    for (std::size_t s = 0; s < idx.size(); ++s) {
      const double* z = logits.data().data() + s * k;
      const auto best = static_cast<std::size_t>(std::max_element(z, z + k) - z);
      if (static_cast<int>(best) == labels[s]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace thinner
