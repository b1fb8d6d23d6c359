#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "thinner/data.hpp"
#include "thinner/tensor.hpp"

namespace thinner {

enum class LayerKind { kConv2D, kDense, kReLU, kMaxPool2D, kFlatten, kSoftmaxCrossEntropy };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& text);

/// One layer of a sequential network.
///
/// Conv2D params are {filters [c_out x c_in x kh x kw], bias [c_out]}.
/// Dense params are {weights [n_in x n_out], bias [n_out]}.
/// All other kinds carry no parameters.
struct Layer {
  LayerKind kind = LayerKind::kReLU;
  std::string name;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t pool = 2;
  std::vector<Tensor> params;

  bool parameterized() const {
    return kind == LayerKind::kConv2D || kind == LayerKind::kDense;
  }
  /// Output units (filters or neurons) of a parameterized layer.
  std::size_t width() const;
  std::size_t input_width() const;

  const Tensor& weights() const { return params.at(0); }
  Tensor& weights() { return params.at(0); }
  const Tensor& bias() const { return params.at(1); }
  Tensor& bias() { return params.at(1); }

  friend bool operator==(const Layer&, const Layer&) = default;
};

struct Model {
  Shape input_shape;  // c x h x w
  std::vector<Layer> layers;
  std::vector<std::size_t> prunable;

  friend bool operator==(const Model&, const Model&) = default;
};

/// Per-sample output shape of every layer. Throws ShapeError naming the
/// first layer whose input does not compose.
std::vector<Shape> layer_output_shapes(const Model& model);

/// Checks shape composition and the prunable-set rules.
void validate(const Model& model);

std::size_t num_classes(const Model& model);
std::size_t parameter_count(const Model& model);
std::size_t prunable_neuron_count(const Model& model);

/// Index of the next parameterized layer after `layer`, if any.
std::optional<std::size_t> next_parameterized(const Model& model, std::size_t layer);

/// Descriptor used to build a model.
struct LayerSpec {
  LayerKind kind = LayerKind::kReLU;
  std::size_t units = 0;  // filters (conv) or neurons (dense)
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t pool = 2;
  std::string name;  // generated when empty
};

/// He-initialised model (N(0, 2/fan_in) weights, zero bias). Every Conv2D
/// and Dense except the last parameterized layer is prunable.
Model init_model(const Shape& input_shape, const std::vector<LayerSpec>& specs,
                 std::uint64_t seed);

/// Parallel to Model::layers[i].params.
using ParamTensors = std::vector<std::vector<Tensor>>;

ParamTensors zeros_like_params(const Model& model);

struct ForwardResult {
  Tensor logits;  // [b x classes]
  /// Layer output Y^l for every prunable layer, keyed by layer index.
  /// Shape [b x c x h x w] for conv layers, [b x n] for dense layers.
  std::map<std::size_t, Tensor> activations;
};

ForwardResult forward(const Model& model, const Tensor& batch, bool record_activations = false);

struct BackwardResult {
  double loss = 0.0;  // mean softmax cross-entropy over the batch
  ParamTensors gradients;
  Tensor input_gradient;  // d loss / d batch
};

BackwardResult backward(const Model& model, const Tensor& batch, std::span<const int> labels);

/// Mean softmax cross-entropy of logits against labels.
double cross_entropy(const Tensor& logits, std::span<const int> labels);

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epochs = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// v <- momentum * v - lr * g;  p <- p + v.
void sgd_step(Model& model, const ParamTensors& gradients, const TrainConfig& config,
              ParamTensors& velocity);

/// 0/1 multipliers per parameter; masked entries stay zero through training.
using ParamMask = ParamTensors;

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
};

struct TrainResult {
  std::vector<double> loss_history;  // mean loss per epoch
};

/// Mini-batch SGD with momentum; velocity starts at zero. The epoch-e
/// batch order comes from batches(n, batch_size, mix64(seed + e)).
TrainResult train(Model& model, const Dataset& data, const TrainConfig& config,
                  const ParamMask* mask = nullptr,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

/// Fraction of samples whose argmax logit equals the label.
double evaluate(const Model& model, const Dataset& data);

/// Writes the THINNER-MODEL file atomically (temp file + rename).
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

std::vector<unsigned char> serialize_model(const Model& model);
Model deserialize_model(std::span<const unsigned char> bytes);

}  // namespace thinner
