#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "thinner/data.hpp"
#include "thinner/network.hpp"

namespace thinner {

enum class Metric { kMeanResponse, kStdResponse, kAaws };

std::string to_string(Metric metric);
/// Accepts "mean", "std" or "aaws".
Metric metric_from_string(const std::string& text);

/// A prunable unit: neuron `index` (dense) or filter `index` (conv) of
/// model layer `layer`.
struct NeuronId {
  std::size_t layer = 0;
  std::size_t index = 0;

  friend auto operator<=>(const NeuronId&, const NeuronId&) = default;
};

/// Running response statistics for every prunable unit. A unit's response
/// to one sample is the spatial mean of its feature map (conv) or its raw
/// output (dense), taken at the layer output before any activation layer.
struct ResponseStats {
  struct Layer {
    std::size_t layer = 0;
    std::string name;
    std::vector<double> mean;
    std::vector<double> m2;  // sum of squared deviations from the mean
  };
  std::size_t count = 0;
  std::vector<Layer> layers;  // in model.prunable order

  /// Welford update with one sample's responses, layer by layer.
  void add(const std::vector<std::vector<double>>& responses);
  double variance(std::size_t layer_pos, std::size_t index) const {
    return layers[layer_pos].m2[index] / static_cast<double>(count);
  }
};

ResponseStats collect_responses(const Model& model, const Dataset& samples);

struct ScoreEntry {
  NeuronId id;
  double raw = 0.0;
  double modified = 0.0;
};

struct LayerScoreSummary {
  std::size_t layer = 0;
  std::string name;
  std::size_t width = 0;
  double mean = 0.0;        // mean raw score of the layer
  bool degenerate = false;  // |mean| below kDegenerateMean; modified scores set to 1
};

struct ScoreTable {
  Metric metric = Metric::kAaws;
  std::vector<ScoreEntry> entries;  // sorted by (layer, index)
  std::vector<LayerScoreSummary> layers;
};

inline constexpr double kDegenerateMean = 1e-12;

/// Raw scores of one layer before normalization.
struct LayerRawScores {
  std::size_t layer = 0;
  std::string name;
  std::vector<double> raw;
};

/// Divides every raw score by its layer's mean raw score so scores from
/// different layers can be ranked together. Layers whose mean is
/// numerically zero get a modified score of 1 for every unit.
ScoreTable normalize_per_layer(Metric metric, std::vector<LayerRawScores> raw);

ScoreTable score_mean_response(const ResponseStats& stats);
/// Population standard deviation of responses. Needs at least two samples.
ScoreTable score_std_response(const ResponseStats& stats);
/// Mean absolute weight per unit: a conv filter's own weights, or a dense
/// neuron's outgoing weights into the next layer. Biases are excluded.
ScoreTable score_aaws(const Model& model);

/// Dispatches on metric; `samples` is ignored for AAWS.
ScoreTable compute_scores(const Model& model, Metric metric, const Dataset& samples);

/// CSV: layer_name,layer_index,neuron_index,raw,modified
void dump_scores(const ScoreTable& table, const std::filesystem::path& path);

struct ScoreRow {
  std::string layer_name;
  std::size_t layer_index = 0;
  std::size_t neuron_index = 0;
  double raw = 0.0;
  double modified = 0.0;
};

std::vector<ScoreRow> read_score_dump(const std::filesystem::path& path);

}  // namespace thinner
