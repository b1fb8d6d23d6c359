#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "thinner/thinner.hpp"

namespace thinner::cli {

struct DataSource {
  enum class Kind { kSynthetic, kIdx };
  Kind kind = Kind::kSynthetic;
  SyntheticTask task;
  std::size_t samples = 8000;
  std::filesystem::path train_images, train_labels;
  // Optional held-out IDX pair. Without it the training files are split.
  std::filesystem::path val_images, val_labels;
  double val_fraction = 0.2;
  std::optional<std::uint64_t> seed;  // defaults to the run seed
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "run";
  std::optional<std::filesystem::path> model_path;
  DataSource data;
  std::vector<LayerSpec> model;
  TrainConfig train;
  Scheme scheme = Scheme::kGlobal;
  PruneConfig prune;
};

/// Command-line overrides. Each one mirrors a config key.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> metric;
  std::optional<std::string> scheme;
  std::optional<double> ratio;
  std::optional<double> target;
  std::optional<std::size_t> max_rounds;
  std::optional<std::string> model;
};

class ConfigError : public ValueError {
 public:
  using ValueError::ValueError;
};

/// The small CNN used by the desk experiments: two conv blocks and two
/// hidden dense layers in front of the classifier.
std::vector<LayerSpec> default_model_spec();

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

void apply_overrides(RunConfig& config, const Overrides& overrides);

/// Range checks across every sub-config. Throws ConfigError.
void validate(const RunConfig& config);


}  // namespace thinner::cli
