#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"

using namespace thinner;
using namespace thinner::cli;

namespace {

struct CommonArgs {
  std::string config;
  Overrides overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.overrides.seed, "root seed");
  cmd->add_option("--out", args.overrides.out, "output directory");
  cmd->add_option("--metric", args.overrides.metric, "neuron score")
      ->check(CLI::IsMember({"mean", "std", "aaws"}));
  cmd->add_option("--scheme", args.overrides.scheme, "selection scheme")
      ->check(CLI::IsMember({"global", "layerwise", "sequential"}));
  cmd->add_option("--ratio", args.overrides.ratio, "pruning ratio per round");
  cmd->add_option("--target", args.overrides.target, "minimum validation accuracy to keep pruning");
  cmd->add_option("--max-rounds", args.overrides.max_rounds, "round limit");
  cmd->add_option("--model", args.overrides.model, "input model file");
}

RunConfig resolve(const CommonArgs& args) {
  RunConfig cfg = args.config.empty() ? parse_run_config(nlohmann::json::object())
                                      : load_run_config(args.config);
  apply_overrides(cfg, args.overrides);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"thinner: gradual global neuron pruning"};
  app.require_subcommand(1);

  CommonArgs args;
  auto* train_cmd = app.add_subcommand("train", "train a model from the config");
  auto* prune_cmd = app.add_subcommand("prune", "prune a trained model");
  auto* eval_cmd = app.add_subcommand("eval", "validation accuracy of a model");
  auto* compare_cmd = app.add_subcommand("compare", "global vs layer-wise pruning from one model");
  auto* inspect_cmd = app.add_subcommand("inspect", "per-layer widths of a model or config");
  auto* scores_cmd = app.add_subcommand("scores", "dump per-neuron scores of a model");
  for (auto* cmd : {train_cmd, prune_cmd, eval_cmd, compare_cmd, inspect_cmd, scores_cmd}) {
    add_common(cmd, args);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = resolve(args);
    if (*train_cmd) cmd_train(cfg, std::cout);
    if (*prune_cmd) cmd_prune(cfg, std::cout);
    if (*eval_cmd) cmd_eval(cfg, std::cout);
    if (*compare_cmd) cmd_compare(cfg, std::cout);
    if (*inspect_cmd) cmd_inspect(cfg, std::cout);
    if (*scores_cmd) cmd_scores(cfg, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
