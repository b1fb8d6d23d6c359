#pragma once

#include <filesystem>
#include <iosfwd>

#include "run_config.hpp"

namespace thinner::cli {

struct Splits {
  Dataset train;
  Dataset val;
};

/// Builds or loads the configured data. Synthetic data and the train/val
/// split depend only on the data seed, so every command sees the same split.
Splits load_splits(const RunConfig& config);

/// Writes <out>/model.model and <out>/train_log.csv.
void cmd_train(const RunConfig& config, std::ostream& log);

/// Runs the configured scheme on config.model_path. Writes final.model,
/// checkpoints/round_<k>.model, scores/round_<k>.csv and report.{csv,json}.
PruneResult cmd_prune(const RunConfig& config, std::ostream& log);

/// Validation accuracy of config.model_path; also written to <out>/eval.json.
double cmd_eval(const RunConfig& config, std::ostream& log);

/// Global and layer-wise runs from the same model and seed, each in its own
/// subdirectory, merged into <out>/compare.csv.
void cmd_compare(const RunConfig& config, std::ostream& log);

/// Per-layer widths, total prunable units and parameter count. Uses
/// config.model_path when set, otherwise the config's layer list.
void cmd_inspect(const RunConfig& config, std::ostream& out);

/// Score dump for config.model_path under the configured metric.
void cmd_scores(const RunConfig& config, std::ostream& log);

}  // namespace thinner::cli
