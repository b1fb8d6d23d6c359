#include "thinner/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "thinner/error.hpp"
#include "thinner/random.hpp"

namespace thinner {

Widths prunable_widths(const Model& model) {
  Widths widths;
  for (std::size_t idx : model.prunable) widths[idx] = model.layers.at(idx).width();
  return widths;
}

std::size_t total_width(const Widths& widths) {
  std::size_t total = 0;
  for (const auto& [layer, width] : widths) total += width;
  return total;
}

std::size_t floor_fraction(std::size_t count, double ratio) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(count) * ratio + 1e-9));
}

std::size_t global_round_removal(std::size_t total, double ratio, std::size_t capacity) {
  return std::min(std::max<std::size_t>(1, floor_fraction(total, ratio)), capacity);
}

namespace {

std::size_t removable_capacity(const Widths& widths, std::size_t floor) {
  std::size_t capacity = 0;
  for (const auto& [layer, width] : widths) capacity += width > floor ? width - floor : 0;
  return capacity;
}

}  // namespace

std::vector<std::size_t> global_schedule(const Widths& widths, double ratio, std::size_t rounds,
                                         std::size_t floor) {
  std::size_t total = total_width(widths);
  std::size_t capacity = removable_capacity(widths, floor);
  std::vector<std::size_t> totals{total};
  for (std::size_t r = 0; r < rounds && capacity > 0; ++r) {
    const std::size_t k = global_round_removal(total, ratio, capacity);
    total -= k;
    capacity -= k;
    totals.push_back(total);
  }
  return totals;
}

std::size_t layerwise_round_removal(std::size_t width, double ratio, std::size_t floor) {
  const std::size_t room = width > floor ? width - floor : 0;
  return std::min(floor_fraction(width, ratio), room);
}

Widths layerwise_step(const Widths& widths, double ratio, std::size_t floor) {
  Widths next = widths;
  for (auto& [layer, width] : next) width -= layerwise_round_removal(width, ratio, floor);
  return next;
}

std::vector<NeuronId> select_global(const ScoreTable& table, std::size_t k,
                                    const Widths& widths, std::size_t floor) {
  if (k == 0) return {};
  if (floor == 0) throw ValueError("layer floor must be at least 1");
  const std::size_t capacity = removable_capacity(widths, floor);
  if (k > capacity) {
    throw InfeasibleError("cannot remove " + std::to_string(k) + " units: only " +
                          std::to_string(capacity) + " are removable above the layer floor");
  }
  std::vector<const ScoreEntry*> order;
  for (const ScoreEntry& e : table.entries) {
    const auto w = widths.find(e.id.layer);
    if (w == widths.end() || e.id.index >= w->second) {
      throw ValueError("score entry (" + std::to_string(e.id.layer) + ", " +
                       std::to_string(e.id.index) + ") is outside the current widths");
    }
    order.push_back(&e);
  }
  std::sort(order.begin(), order.end(), [](const ScoreEntry* a, const ScoreEntry* b) {
    if (a->modified != b->modified) return a->modified < b->modified;
    return a->id < b->id;
  });
  // Greedy is optimal: the per-layer caps form a partition matroid.
  Widths room;
  for (const auto& [layer, width] : widths) room[layer] = width > floor ? width - floor : 0;
  std::vector<NeuronId> chosen;
  for (const ScoreEntry* e : order) {
    if (chosen.size() == k) break;
    auto& left = room[e->id.layer];
    if (left == 0) continue;
    --left;
    chosen.push_back(e->id);
  }
  if (chosen.size() != k) throw InfeasibleError("score table does not cover enough units");
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<NeuronId> select_in_layer(const ScoreTable& table, std::size_t layer,
                                      std::size_t count) {
  std::vector<const ScoreEntry*> entries;
  for (const ScoreEntry& e : table.entries) {
    if (e.id.layer == layer) entries.push_back(&e);
  }
  if (count > entries.size()) {
    throw InfeasibleError("layer " + std::to_string(layer) + " has only " +
                          std::to_string(entries.size()) + " units");
  }
  std::stable_sort(entries.begin(), entries.end(), [](const ScoreEntry* a, const ScoreEntry* b) {
    if (a->raw != b->raw) return a->raw < b->raw;
    return a->id.index < b->id.index;
  });
  std::vector<NeuronId> chosen;
  for (std::size_t i = 0; i < count; ++i) chosen.push_back(entries[i]->id);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<NeuronId> select_layerwise_proportional(const ScoreTable& table, double ratio,
                                                    const Widths& widths, std::size_t floor) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValueError("ratio must be in (0, 1)");
  if (floor == 0) throw ValueError("layer floor must be at least 1");
  std::vector<NeuronId> chosen;
  for (const auto& [layer, width] : widths) {
    const auto picked = select_in_layer(table, layer, layerwise_round_removal(width, ratio, floor));
    chosen.insert(chosen.end(), picked.begin(), picked.end());
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

namespace {

// Victim indices per prunable layer, validated against the model.
std::map<std::size_t, std::set<std::size_t>> group_victims(const Model& model,
                                                           std::span<const NeuronId> victims) {
  std::map<std::size_t, std::set<std::size_t>> grouped;
  for (const NeuronId& id : victims) {
    if (std::find(model.prunable.begin(), model.prunable.end(), id.layer) ==
        model.prunable.end()) {
      throw ValueError("layer " + std::to_string(id.layer) + " is not prunable");
    }
    if (id.index >= model.layers[id.layer].width()) {
      throw ValueError("unit " + std::to_string(id.index) + " out of range for layer " +
                       model.layers[id.layer].name);
    }
    grouped[id.layer].insert(id.index);
  }
  return grouped;
}

// For each parameterized layer, which output units and which inputs go away.
struct Surgery {
  std::vector<std::vector<bool>> drop_out;  // per layer, over output units
  std::vector<std::vector<bool>> drop_in;   // per layer, over weight input slots
};

Surgery plan_surgery(const Model& model, std::span<const NeuronId> victims) {
  validate(model);
  const auto grouped = group_victims(model, victims);
  const auto shapes = layer_output_shapes(model);
  Surgery plan;
  plan.drop_out.resize(model.layers.size());
  plan.drop_in.resize(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    if (!layer.parameterized()) continue;
    plan.drop_out[i].assign(layer.width(), false);
    plan.drop_in[i].assign(layer.input_width(), false);
  }
  for (const auto& [idx, units] : grouped) {
    for (std::size_t u : units) plan.drop_out[idx][u] = true;
    const std::size_t next = *next_parameterized(model, idx);
    // Inputs of `next` that carry unit u: one slot, unless a flatten sits in
    // between, in which case channel u owns a contiguous block.
    std::size_t block = 1;
    for (std::size_t k = idx + 1; k < next; ++k) {
      if (model.layers[k].kind == LayerKind::kFlatten) {
        const Shape& before = shapes[k - 1];
        block = shape_size(before) / before[0];
      }
    }
    if (model.layers[next].input_width() != model.layers[idx].width() * block) {
      throw ShapeError("cannot map units of layer " + model.layers[idx].name +
                       " onto the inputs of " + model.layers[next].name);
    }
    for (std::size_t u : units)
      for (std::size_t j = 0; j < block; ++j) plan.drop_in[next][u * block + j] = true;
  }
  return plan;
}

std::vector<std::size_t> kept(const std::vector<bool>& dropped) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < dropped.size(); ++i)
    if (!dropped[i]) out.push_back(i);
  return out;
}

}  // namespace

Model drop_neurons(const Model& model, std::span<const NeuronId> victims, std::size_t floor) {
  if (floor == 0) throw ValueError("layer floor must be at least 1");
  const Surgery plan = plan_surgery(model, victims);
  Model out = model;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    if (!layer.parameterized()) continue;
    const auto keep_out = kept(plan.drop_out[i]);
    const auto keep_in = kept(plan.drop_in[i]);
    if (keep_out.size() < floor) {
      throw InfeasibleError("removing " + std::to_string(layer.width() - keep_out.size()) +
                            " units would take layer " + layer.name + " below " +
                            std::to_string(floor));
    }
    if (keep_out.size() == layer.width() && keep_in.size() == layer.input_width()) continue;
    const Tensor& w = layer.weights();
    Tensor bias({keep_out.size()});
    for (std::size_t o = 0; o < keep_out.size(); ++o) bias[o] = layer.bias()[keep_out[o]];
    if (layer.kind == LayerKind::kConv2D) {
      const std::size_t kh = w.dim(2), kw = w.dim(3), area = kh * kw;
      Tensor nw({keep_out.size(), keep_in.size(), kh, kw});
      for (std::size_t o = 0; o < keep_out.size(); ++o)
        for (std::size_t c = 0; c < keep_in.size(); ++c)
          std::copy_n(w.data().begin() + static_cast<std::ptrdiff_t>(
                                             (keep_out[o] * w.dim(1) + keep_in[c]) * area),
                      area,
                      nw.data().begin() +
                          static_cast<std::ptrdiff_t>((o * keep_in.size() + c) * area));
      out.layers[i].params = {std::move(nw), std::move(bias)};
    } else {
      const std::size_t n_out = w.dim(1);
      Tensor nw({keep_in.size(), keep_out.size()});
      for (std::size_t r = 0; r < keep_in.size(); ++r)
        for (std::size_t o = 0; o < keep_out.size(); ++o)
          nw[r * keep_out.size() + o] = w[keep_in[r] * n_out + keep_out[o]];
      out.layers[i].params = {std::move(nw), std::move(bias)};
    }
  }
  validate(out);
  return out;
}

ParamMask neuron_mask(const Model& model, std::span<const NeuronId> victims) {
  const Surgery plan = plan_surgery(model, victims);
  ParamMask mask = zeros_like_params(model);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    if (!layer.parameterized()) continue;
    Tensor& w = mask[i][0];
    Tensor& b = mask[i][1];
    w.fill(1.0);
    b.fill(1.0);
    const auto& out = plan.drop_out[i];
    const auto& in = plan.drop_in[i];
    for (std::size_t o = 0; o < out.size(); ++o)
      if (out[o]) b[o] = 0.0;
    if (layer.kind == LayerKind::kConv2D) {
      const std::size_t c_in = w.dim(1), area = w.dim(2) * w.dim(3);
      for (std::size_t o = 0; o < w.dim(0); ++o)
        for (std::size_t c = 0; c < c_in; ++c)
          if (out[o] || in[c])
            std::fill_n(w.data().begin() + static_cast<std::ptrdiff_t>((o * c_in + c) * area),
                        area, 0.0);
    } else {
      const std::size_t n_out = w.dim(1);
      for (std::size_t r = 0; r < w.dim(0); ++r)
        for (std::size_t o = 0; o < n_out; ++o)
          if (out[o] || in[r]) w[r * n_out + o] = 0.0;
    }
  }
  return mask;
}

Model mask_neurons(const Model& model, std::span<const NeuronId> victims) {
  const ParamMask mask = neuron_mask(model, victims);
  Model out = model;
  for (std::size_t i = 0; i < out.layers.size(); ++i)
    for (std::size_t p = 0; p < out.layers[i].params.size(); ++p)
      out.layers[i].params[p] = mul(out.layers[i].params[p], mask[i][p]);
  return out;
}

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::kGlobal: return "global";
    case Scheme::kLayerwise: return "layerwise";
    case Scheme::kSequential: return "sequential";
  }
  return "unknown";
}

Scheme scheme_from_string(const std::string& text) {
  if (text == "global") return Scheme::kGlobal;
  if (text == "layerwise") return Scheme::kLayerwise;
  if (text == "sequential") return Scheme::kSequential;
  throw ValueError("unknown scheme '" + text + "' (expected global, layerwise or sequential)");
}

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::kTargetBreached: return "target_breached";
    case StopReason::kMaxRounds: return "max_rounds";
    case StopReason::kLayerFloor: return "layer_floor";
  }
  return "unknown";
}

void PruneConfig::validate() const {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValueError("ratio must be in (0, 1)");
  if (!(target_accuracy >= 0.0 && target_accuracy <= 1.0)) {
    throw ValueError("target accuracy must be in [0, 1]");
  }
  if (max_rounds == 0) throw ValueError("max_rounds must be positive");
  if (min_neurons_per_layer == 0) throw ValueError("min_neurons_per_layer must be at least 1");
  if (stats_samples == 0) throw ValueError("stats_samples must be positive");
  finetune.validate();
}

Dataset stats_subset(const Dataset& train_set, const PruneConfig& config, std::size_t round) {
  if (config.metric == Metric::kAaws || train_set.size() <= config.stats_samples) {
    return train_set;
  }
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(config.seed, SeedStream::kStatsSubset, round));
  rng.shuffle(std::span<std::size_t>(order));
  order.resize(config.stats_samples);
  return subset(train_set, order);
}

namespace {


// Chooses the victims of one round; nullopt stops the loop at the layer floor.
using Selector = std::function<std::optional<std::vector<NeuronId>>(
    const Model&, std::size_t round, std::function<ScoreTable()> scores)>;

class Runner {
 public:
  Runner(const Model& model, const Dataset& train_set, const Dataset& val_set,
         const PruneConfig& config, const PruneHooks& hooks, Scheme scheme)
      : model_(model), train_(train_set), val_(val_set), config_(config), hooks_(hooks) {
    config_.validate();
    validate(model_);
    report_.scheme = scheme;
    report_.metric = config.metric;
    report_.ratio = config.ratio;
    for (std::size_t idx : model_.prunable) report_.layer_names[idx] = model_.layers[idx].name;
    report_.initial_widths = prunable_widths(model_);
    if (hooks_.checkpoint_dir) std::filesystem::create_directories(*hooks_.checkpoint_dir);
  }

  // rounds_limit bounds the loop; the selector decides each round's victims.
  PruneResult run(std::size_t rounds_limit, const Selector& select) {
    try {
      double accuracy = evaluate(model_, val_);
      report_.initial_accuracy = accuracy;
      std::size_t round = 0;
      while (true) {
        if (accuracy < config_.target_accuracy) {
          report_.stop_reason = StopReason::kTargetBreached;
          break;
        }
        if (round >= rounds_limit) {
          report_.stop_reason = StopReason::kMaxRounds;
          break;
        }
        ++round;
        auto scores = [&, round] {
          ScoreTable table =
              compute_scores(model_, config_.metric, stats_subset(train_, config_, round));
          if (hooks_.on_scores) hooks_.on_scores(round, table);
          return table;
        };
        const auto victims = select(model_, round, scores);
        if (!victims) {
          report_.stop_reason = StopReason::kLayerFloor;
          break;
        }
        accuracy = run_round(round, *victims);
      }
      if (hooks_.flush) hooks_.flush(report_);
      return {std::move(model_), std::move(report_)};
    } catch (...) {
      if (hooks_.flush) hooks_.flush(report_);
      throw;
    }
  }

  const PruneConfig& config() const { return config_; }

 private:
  double run_round(std::size_t round, const std::vector<NeuronId>& victims) {
    PruneRound rec;
    rec.round = round;
    rec.total_before = prunable_neuron_count(model_);
    for (const NeuronId& id : victims) ++rec.removed[id.layer];
    model_ = drop_neurons(model_, victims, config_.min_neurons_per_layer);
    rec.total_after = prunable_neuron_count(model_);
    rec.widths_after = prunable_widths(model_);
    rec.acc_before_ft = evaluate(model_, val_);
    TrainConfig ft = config_.finetune;
    ft.seed = derive_seed(config_.seed, SeedStream::kFinetune, round);
    train(model_, train_, ft);
    rec.finetune_epochs = ft.epochs;
    rec.acc_after_ft = evaluate(model_, val_);
    report_.rounds.push_back(rec);
    if (hooks_.checkpoint_dir) {
      save_model(model_, *hooks_.checkpoint_dir / ("round_" + std::to_string(round) + ".model"));
    }
    if (hooks_.flush) hooks_.flush(report_);
    return rec.acc_after_ft;
  }

  Model model_;
  const Dataset& train_;
  const Dataset& val_;
  PruneConfig config_;
  const PruneHooks& hooks_;
  PruneReport report_;
};

}  // namespace

PruneResult prune_gradually_global(const Model& model, const Dataset& train_set,
                                   const Dataset& val_set, const PruneConfig& config,
                                   const PruneHooks& hooks) {
  Runner runner(model, train_set, val_set, config, hooks, Scheme::kGlobal);
  const std::size_t floor = config.min_neurons_per_layer;
  return runner.run(config.max_rounds,
                    [&](const Model& m, std::size_t, std::function<ScoreTable()> scores)
                        -> std::optional<std::vector<NeuronId>> {
                      const Widths widths = prunable_widths(m);
                      const std::size_t capacity = removable_capacity(widths, floor);
                      if (capacity == 0) return std::nullopt;
                      const std::size_t k =
                          global_round_removal(total_width(widths), config.ratio, capacity);
                      return select_global(scores(), k, widths, floor);
                    });
}

PruneResult prune_layerwise_gradual(const Model& model, const Dataset& train_set,
                                    const Dataset& val_set, const PruneConfig& config,
                                    const PruneHooks& hooks) {
  Runner runner(model, train_set, val_set, config, hooks, Scheme::kLayerwise);
  const std::size_t floor = config.min_neurons_per_layer;
  return runner.run(config.max_rounds,
                    [&](const Model& m, std::size_t, std::function<ScoreTable()> scores)
                        -> std::optional<std::vector<NeuronId>> {
                      const Widths widths = prunable_widths(m);
                      if (removable_capacity(widths, floor) == 0) return std::nullopt;
                      return select_layerwise_proportional(scores(), config.ratio, widths, floor);
                    });
}

PruneResult prune_layer_sequential(const Model& model, const Dataset& train_set,
                                   const Dataset& val_set, double per_layer_ratio,
                                   const PruneConfig& config, const PruneHooks& hooks) {
  if (!(per_layer_ratio > 0.0 && per_layer_ratio < 1.0)) {
    throw ValueError("per-layer ratio must be in (0, 1)");
  }
  Runner runner(model, train_set, val_set, config, hooks, Scheme::kSequential);
  const std::size_t floor = config.min_neurons_per_layer;
  const std::vector<std::size_t> order = model.prunable;
  auto result = runner.run(
      order.size(),
      [&](const Model& m, std::size_t round,
          std::function<ScoreTable()> scores) -> std::optional<std::vector<NeuronId>> {
        const std::size_t layer = order[round - 1];
        const std::size_t count =
            layerwise_round_removal(m.layers[layer].width(), per_layer_ratio, floor);
        return select_in_layer(scores(), layer, count);
      });
  result.report.ratio = per_layer_ratio;
  return result;
}

}  // namespace thinner
