#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "thinner/data.hpp"
#include "thinner/network.hpp"
#include "thinner/scoring.hpp"

namespace thinner {

/// Current width of every prunable layer, keyed by model layer index.
using Widths = std::map<std::size_t, std::size_t>;

Widths prunable_widths(const Model& model);
std::size_t total_width(const Widths& widths);

// ---------------------------------------------------------------------------
// Removal-count arithmetic. Counts use floor(x * ratio); a 1e-9 slack absorbs
// binary representation error (e.g. 100 * 0.05).

std::size_t floor_fraction(std::size_t count, double ratio);

/// Units removed by one global round: max(1, floor(total * ratio)), capped at
/// `capacity` (units removable without crossing any layer floor).
std::size_t global_round_removal(std::size_t total, double ratio, std::size_t capacity);

/// Totals after 0..rounds global rounds, starting from `widths`.
std::vector<std::size_t> global_schedule(const Widths& widths, double ratio, std::size_t rounds,
                                         std::size_t floor);

/// Units one layer loses in a layer-wise round: min(floor(width * ratio), width - floor).
std::size_t layerwise_round_removal(std::size_t width, double ratio, std::size_t floor);

/// Widths after one layer-wise proportional round.
Widths layerwise_step(const Widths& widths, double ratio, std::size_t floor);

// ---------------------------------------------------------------------------
// Selection

/// The k units with the smallest modified scores across all layers, never
/// taking a layer below `floor`. Ties go to the lower layer index, then the
/// lower unit index. Throws InfeasibleError if fewer than k units are
/// removable. The result is sorted by NeuronId.
std::vector<NeuronId> select_global(const ScoreTable& table, std::size_t k,
                                    const Widths& widths, std::size_t floor);

/// Per layer, the layerwise_round_removal(...) units with the smallest raw scores.
std::vector<NeuronId> select_layerwise_proportional(const ScoreTable& table, double ratio,
                                                    const Widths& widths, std::size_t floor);

/// The `count` lowest raw-score units of a single layer.
std::vector<NeuronId> select_in_layer(const ScoreTable& table, std::size_t layer,
                                      std::size_t count);

// ---------------------------------------------------------------------------
// Removal

/// Builds the thinner dense model: victim filters/neurons disappear together
/// with the matching input slice of the next conv/dense layer (one channel,
/// one row, or the h*w block a channel occupies after flattening). Surviving
/// parameters are copied bit-exactly.
Model drop_neurons(const Model& model, std::span<const NeuronId> victims,
                   std::size_t floor = 1);

/// 0/1 mask covering the same parameters drop_neurons would remove.
ParamMask neuron_mask(const Model& model, std::span<const NeuronId> victims);

/// Same-shape model with the masked parameters zeroed.
Model mask_neurons(const Model& model, std::span<const NeuronId> victims);

// ---------------------------------------------------------------------------
// Pruning loops

enum class Scheme { kGlobal, kLayerwise, kSequential };
std::string to_string(Scheme scheme);
Scheme scheme_from_string(const std::string& text);

enum class StopReason { kTargetBreached, kMaxRounds, kLayerFloor };
std::string to_string(StopReason reason);

struct PruneConfig {
  double ratio = 0.05;
  double target_accuracy = 0.0;
  Metric metric = Metric::kAaws;
  std::size_t max_rounds = 7;
  std::size_t min_neurons_per_layer = 1;
  TrainConfig finetune{0.01, 0.9, 32, 2, 0};
  std::size_t stats_samples = 1024;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Training samples used for response statistics in a round: all of them
/// for AAWS or when there are few enough, otherwise a seeded random subset.
Dataset stats_subset(const Dataset& train_set, const PruneConfig& config, std::size_t round);

struct PruneRound {
  std::size_t round = 0;
  std::size_t total_before = 0;
  std::size_t total_after = 0;
  Widths removed;       // units removed per layer this round
  Widths widths_after;  // per-layer widths after the drop
  double acc_before_ft = 0.0;
  double acc_after_ft = 0.0;
  std::size_t finetune_epochs = 0;
};

struct PruneReport {
  Scheme scheme = Scheme::kGlobal;
  Metric metric = Metric::kAaws;
  double ratio = 0.0;
  std::map<std::size_t, std::string> layer_names;
  Widths initial_widths;
  double initial_accuracy = 0.0;
  std::vector<PruneRound> rounds;
  std::optional<StopReason> stop_reason;  // unset while the run is in progress
};

struct PruneHooks {
  /// Receives round_<k>.model after every round when set.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Called with the scores used to select round k's victims.
  std::function<void(std::size_t round, const ScoreTable&)> on_scores;
  /// Called after every round and before an error propagates.
  std::function<void(const PruneReport&)> flush;
};

struct PruneResult {
  Model model;
  PruneReport report;
};

/// Select-prune-fine-tune loop with global selection: while validation
/// accuracy stays at or above the target, drop the globally lowest-scored
/// fraction of units and fine-tune.
PruneResult prune_gradually_global(const Model& model, const Dataset& train_set,
                                   const Dataset& val_set, const PruneConfig& config,
                                   const PruneHooks& hooks = {});

/// Same loop, removing floor(width * ratio) units from every layer each round.
PruneResult prune_layerwise_gradual(const Model& model, const Dataset& train_set,
                                    const Dataset& val_set, const PruneConfig& config,
                                    const PruneHooks& hooks = {});

/// One round per prunable layer, in order: drop floor(width * per_layer_ratio)
/// units from that layer only, then fine-tune.
PruneResult prune_layer_sequential(const Model& model, const Dataset& train_set,
                                   const Dataset& val_set, double per_layer_ratio,
                                   const PruneConfig& config, const PruneHooks& hooks = {});

// ---------------------------------------------------------------------------
// Report files

/// Columns: round,scheme,metric,total_before,total_after,acc_before_ft,
/// acc_after_ft,stop_reason. Row 0 is the starting model; the stop reason
/// appears on the last row.
std::string report_csv(const PruneReport& report);
std::string report_json(const PruneReport& report);
void write_report_files(const PruneReport& report, const std::filesystem::path& csv_path,
                        const std::filesystem::path& json_path);

}  // namespace thinner
