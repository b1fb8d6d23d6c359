#include "thinner/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "thinner/error.hpp"

namespace thinner {

std::string to_string(Metric metric) {
  switch (metric) {
    case Metric::kMeanResponse: return "mean";
    case Metric::kStdResponse: return "std";
    case Metric::kAaws: return "aaws";
  }
  return "unknown";
}

Metric metric_from_string(const std::string& text) {
  if (text == "mean") return Metric::kMeanResponse;
  if (text == "std") return Metric::kStdResponse;
  if (text == "aaws") return Metric::kAaws;
  throw ValueError("unknown metric '" + text + "' (expected mean, std or aaws)");
}

void ResponseStats::add(const std::vector<std::vector<double>>& responses) {
  if (responses.size() != layers.size()) throw ValueError("response layer count mismatch");
  ++count;
  const double n = static_cast<double>(count);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Layer& layer = layers[l];
    if (responses[l].size() != layer.mean.size()) throw ValueError("response width mismatch");
    for (std::size_t i = 0; i < layer.mean.size(); ++i) {
      const double x = responses[l][i];
      const double delta = x - layer.mean[i];
      layer.mean[i] += delta / n;
      layer.m2[i] += delta * (x - layer.mean[i]);
    }
  }
}

ResponseStats collect_responses(const Model& model, const Dataset& samples) {
  if (samples.size() == 0) throw ValueError("response statistics need at least one sample");
  ResponseStats stats;
  for (std::size_t idx : model.prunable) {
    const Layer& layer = model.layers.at(idx);
    stats.layers.push_back({idx, layer.name, std::vector<double>(layer.width(), 0.0),
                            std::vector<double>(layer.width(), 0.0)});
  }
  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> idx;
  std::vector<std::vector<double>> responses(stats.layers.size());
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + kChunk); ++i) {
      idx.push_back(i);
    }
    const auto [images, labels] = gather(samples, idx);
    const ForwardResult fwd = forward(model, images, true);
    for (std::size_t s = 0; s < idx.size(); ++s) {
      for (std::size_t l = 0; l < stats.layers.size(); ++l) {
        const Tensor& act = fwd.activations.at(stats.layers[l].layer);
        const std::size_t width = stats.layers[l].mean.size();
        const std::size_t area = act.size() / (act.dim(0) * width);
        const double* base = act.data().data() + s * width * area;
        auto& r = responses[l];
        r.assign(width, 0.0);
        for (std::size_t i = 0; i < width; ++i) {
          double sum = 0.0;
          for (std::size_t p = 0; p < area; ++p) sum += base[i * area + p];
          r[i] = sum / static_cast<double>(area);
        }
      }
      stats.add(responses);
    }
  }
  return stats;
}

ScoreTable normalize_per_layer(Metric metric, std::vector<LayerRawScores> raw) {
  std::sort(raw.begin(), raw.end(),
            [](const LayerRawScores& a, const LayerRawScores& b) { return a.layer < b.layer; });
  ScoreTable table;
  table.metric = metric;
  for (std::size_t l = 0; l < raw.size(); ++l) {
    const LayerRawScores& layer = raw[l];
    if (layer.raw.empty()) throw ValueError("layer " + layer.name + " has no neurons to score");
    if (l > 0 && raw[l - 1].layer == layer.layer) throw ValueError("duplicate layer in scores");
    double sum = 0.0;
    for (double s : layer.raw) sum += s;
    const double mean = sum / static_cast<double>(layer.raw.size());
    const bool degenerate = !(std::abs(mean) >= kDegenerateMean);
    table.layers.push_back({layer.layer, layer.name, layer.raw.size(), mean, degenerate});
    for (std::size_t i = 0; i < layer.raw.size(); ++i) {
      table.entries.push_back(
          {{layer.layer, i}, layer.raw[i], degenerate ? 1.0 : layer.raw[i] / mean});
    }
  }
  return table;
}

ScoreTable score_mean_response(const ResponseStats& stats) {
  if (stats.count == 0) throw ValueError("response statistics are empty");
  std::vector<LayerRawScores> raw;
  for (const auto& layer : stats.layers) raw.push_back({layer.layer, layer.name, layer.mean});
  return normalize_per_layer(Metric::kMeanResponse, std::move(raw));
}

ScoreTable score_std_response(const ResponseStats& stats) {
  if (stats.count < 2) {
    throw ValueError("standard-deviation scores need at least 2 samples, got " +
                     std::to_string(stats.count));
  }
  std::vector<LayerRawScores> raw;
  for (std::size_t l = 0; l < stats.layers.size(); ++l) {
    const auto& layer = stats.layers[l];
    LayerRawScores scores{layer.layer, layer.name, {}};
    for (std::size_t i = 0; i < layer.m2.size(); ++i) {
      scores.raw.push_back(std::sqrt(std::max(0.0, stats.variance(l, i))));
    }
    raw.push_back(std::move(scores));
  }
  return normalize_per_layer(Metric::kStdResponse, std::move(raw));
}

ScoreTable score_aaws(const Model& model) {
  validate(model);
  std::vector<LayerRawScores> raw;
  for (std::size_t idx : model.prunable) {
    const Layer& layer = model.layers[idx];
    LayerRawScores scores{idx, layer.name, std::vector<double>(layer.width(), 0.0)};
    if (layer.kind == LayerKind::kConv2D) {
      const Tensor& f = layer.weights();
      const std::size_t n_p = f.size() / f.dim(0);
      for (std::size_t i = 0; i < f.dim(0); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n_p; ++j) sum += std::abs(f[i * n_p + j]);
        scores.raw[i] = sum / static_cast<double>(n_p);
      }
    } else {
      // Outgoing connections: row i of the next layer's [n_in x n_out] weights.
      const Tensor& next = model.layers.at(*next_parameterized(model, idx)).weights();
      const std::size_t fan_out = next.dim(1);
      for (std::size_t i = 0; i < layer.width(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < fan_out; ++j) sum += std::abs(next[i * fan_out + j]);
        scores.raw[i] = sum / static_cast<double>(fan_out);
      }
    }
    raw.push_back(std::move(scores));
  }
  return normalize_per_layer(Metric::kAaws, std::move(raw));
}

ScoreTable compute_scores(const Model& model, Metric metric, const Dataset& samples) {
  switch (metric) {
    case Metric::kAaws: return score_aaws(model);
    case Metric::kMeanResponse: return score_mean_response(collect_responses(model, samples));
    case Metric::kStdResponse: return score_std_response(collect_responses(model, samples));
  }
  throw ValueError("unknown metric");
}

void dump_scores(const ScoreTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write score dump " + path.string());
  std::vector<ScoreEntry> entries = table.entries;
  std::sort(entries.begin(), entries.end(),
            [](const ScoreEntry& a, const ScoreEntry& b) { return a.id < b.id; });
  out << "layer_name,layer_index,neuron_index,raw,modified\n";
  char buf[64];
  for (const ScoreEntry& e : entries) {
    const auto info = std::find_if(table.layers.begin(), table.layers.end(),
                                   [&](const auto& l) { return l.layer == e.id.layer; });
    out << (info != table.layers.end() ? info->name : "") << ',' << e.id.layer << ','
        << e.id.index << ',';
    std::snprintf(buf, sizeof buf, "%.17g", e.raw);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", e.modified);
    out << buf << '\n';
  }
  if (!out) throw IoError("failed writing score dump " + path.string());
}

std::vector<ScoreRow> read_score_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read score dump " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "layer_name,layer_index,neuron_index,raw,modified") {
    throw FormatError("score dump has an unexpected header");
  }
  std::vector<ScoreRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string name, layer, index, raw, modified;
    if (!std::getline(fields, name, ',') || !std::getline(fields, layer, ',') ||
        !std::getline(fields, index, ',') || !std::getline(fields, raw, ',') ||
        !std::getline(fields, modified)) {
      throw FormatError("malformed score dump row: " + line);
    }
    rows.push_back({name, std::stoull(layer), std::stoull(index), std::stod(raw),
                    std::stod(modified)});
  }
  return rows;
}

}  // namespace thinner
