#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace thinner::cli {

namespace {

namespace fs = std::filesystem;

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::uint64_t data_seed(const RunConfig& cfg) { return cfg.data.seed.value_or(cfg.seed); }

Model input_model(const RunConfig& cfg) {
  if (!cfg.model_path) throw ConfigError("this command needs --model or model_path");
  return load_model(*cfg.model_path);
}

void archive_config(const RunConfig& cfg) {
  write_text_atomic(cfg.out / "config.json", to_json(cfg).dump(2) + "\n");
}

PruneResult run_scheme(const Model& model, const Splits& data, const RunConfig& cfg, Scheme scheme,
                       const fs::path& dir, std::ostream& log) {
  fs::create_directories(dir / "scores");
  PruneHooks hooks;
  hooks.checkpoint_dir = dir / "checkpoints";
  hooks.on_scores = [&](std::size_t round, const ScoreTable& table) {
    dump_scores(table, dir / "scores" / ("round_" + std::to_string(round) + ".csv"));
  };
  std::size_t logged = 0;
  hooks.flush = [&](const PruneReport& report) {
    write_report_files(report, dir / "report.csv", dir / "report.json");
    if (report.rounds.size() > logged) {
      logged = report.rounds.size();
      const PruneRound& r = report.rounds.back();
      log << to_string(scheme) << " round " << r.round << ": " << r.total_before << " -> "
          << r.total_after << " units, accuracy " << fixed(r.acc_before_ft, 4) << " -> "
          << fixed(r.acc_after_ft, 4) << " after fine-tuning\n";
    }
  };

  PruneConfig prune = cfg.prune;
  prune.seed = cfg.seed;
  PruneResult result;
  switch (scheme) {
    case Scheme::kGlobal:
      result = prune_gradually_global(model, data.train, data.val, prune, hooks);
      break;
    case Scheme::kLayerwise:
      result = prune_layerwise_gradual(model, data.train, data.val, prune, hooks);
      break;
    case Scheme::kSequential:
      result = prune_layer_sequential(model, data.train, data.val, prune.ratio, prune, hooks);
      break;
  }
  save_model(result.model, dir / "final.model");
  log << to_string(scheme) << " stopped (" << to_string(*result.report.stop_reason) << ") after "
      << result.report.rounds.size() << " round(s); " << prunable_neuron_count(result.model)
      << " prunable units remain\n";
  return result;
}

}  // namespace

Splits load_splits(const RunConfig& cfg) {
  const DataSource& d = cfg.data;
  const std::uint64_t seed = data_seed(cfg);
  if (d.kind == DataSource::Kind::kIdx) {
    Dataset train_set = load_idx_images(d.train_images, d.train_labels);
    if (!d.val_images.empty()) {
      return {std::move(train_set), load_idx_images(d.val_images, d.val_labels)};
    }
    auto [tr, va] = split(train_set, 1.0 - d.val_fraction, derive_seed(seed, SeedStream::kSplit, 0));
    return {std::move(tr), std::move(va)};
  }
  const Dataset all = generate_synthetic(d.task, d.samples, derive_seed(seed, SeedStream::kData, 0));
  auto [tr, va] = split(all, 1.0 - d.val_fraction, derive_seed(seed, SeedStream::kSplit, 0));
  return {std::move(tr), std::move(va)};
}

void cmd_train(const RunConfig& cfg, std::ostream& log) {
  validate(cfg);
  const Splits data = load_splits(cfg);
  Model model = init_model(data.train.sample_shape(), cfg.model, derive_seed(cfg.seed, SeedStream::kInit, 0));
  if (num_classes(model) != static_cast<std::size_t>(data.train.classes)) {
    throw ConfigError("the model has " + std::to_string(num_classes(model)) + " outputs but the data has " +
                      std::to_string(data.train.classes) + " classes");
  }
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, SeedStream::kTrain, 0);

  std::ostringstream csv;
  csv << "epoch,loss,val_accuracy\n";
  train(model, data.train, tc, nullptr, [&](const EpochStats& s) {
    const double acc = evaluate(model, data.val);
    csv << s.epoch + 1 << ',' << fixed(s.mean_loss, 8) << ',' << fixed(acc) << '\n';
    log << "epoch " << s.epoch + 1 << "/" << tc.epochs << ": loss " << fixed(s.mean_loss, 5)
        << ", validation accuracy " << fixed(acc, 4) << "\n";
  });

  fs::create_directories(cfg.out);
  save_model(model, cfg.out / "model.model");
  write_text_atomic(cfg.out / "train_log.csv", csv.str());
  archive_config(cfg);
  log << "wrote " << (cfg.out / "model.model").string() << " (" << prunable_neuron_count(model)
      << " prunable units, validation accuracy " << fixed(evaluate(model, data.val), 4) << ")\n";
}

PruneResult cmd_prune(const RunConfig& cfg, std::ostream& log) {
  validate(cfg);
  const Model model = input_model(cfg);
  const Splits data = load_splits(cfg);
  fs::create_directories(cfg.out);
  archive_config(cfg);
  return run_scheme(model, data, cfg, cfg.scheme, cfg.out, log);
}

double cmd_eval(const RunConfig& cfg, std::ostream& log) {
  validate(cfg);
  const Model model = input_model(cfg);
  const Splits data = load_splits(cfg);
  const double acc = evaluate(model, data.val);
  nlohmann::ordered_json doc{{"model", cfg.model_path->string()},
                             {"samples", data.val.size()},
                             {"accuracy", acc},
                             {"prunable_units", prunable_neuron_count(model)}};
  write_text_atomic(cfg.out / "eval.json", doc.dump(2) + "\n");
  log << "accuracy " << fixed(acc) << " on " << data.val.size() << " validation samples\n";
  return acc;
}

void cmd_compare(const RunConfig& cfg, std::ostream& log) {
  validate(cfg);
  const Model model = input_model(cfg);
  const Splits data = load_splits(cfg);
  fs::create_directories(cfg.out);
  archive_config(cfg);

  std::ostringstream csv;
  csv << "round,scheme,total_neurons,accuracy\n";
  for (Scheme scheme : {Scheme::kGlobal, Scheme::kLayerwise}) {
    const PruneResult result = run_scheme(model, data, cfg, scheme, cfg.out / to_string(scheme), log);
    const PruneReport& rep = result.report;
    csv << 0 << ',' << to_string(scheme) << ',' << total_width(rep.initial_widths) << ','
        << fixed(rep.initial_accuracy) << '\n';
    for (const PruneRound& r : rep.rounds) {
      csv << r.round << ',' << to_string(scheme) << ',' << r.total_after << ',' << fixed(r.acc_after_ft) << '\n';
    }
  }
  write_text_atomic(cfg.out / "compare.csv", csv.str());
  log << "wrote " << (cfg.out / "compare.csv").string() << "\n";
}

void cmd_inspect(const RunConfig& cfg, std::ostream& out) {
  Model model;
  if (cfg.model_path) {
    model = load_model(*cfg.model_path);
  } else {
    validate(cfg);
    Shape shape;
    if (cfg.data.kind == DataSource::Kind::kSynthetic) {
      shape = {cfg.data.task.channels, cfg.data.task.height, cfg.data.task.width};
    } else {
      shape = load_splits(cfg).train.sample_shape();
    }
    model = init_model(shape, cfg.model, derive_seed(cfg.seed, SeedStream::kInit, 0));
  }

  std::size_t name_width = 5;
  for (std::size_t idx : model.prunable) name_width = std::max(name_width, model.layers[idx].name.size());
  const int w = static_cast<int>(name_width) + 2;
  out << std::left << std::setw(w) << "layer" << "width\n";
  for (std::size_t idx : model.prunable) {
    out << std::left << std::setw(w) << model.layers[idx].name << model.layers[idx].width() << '\n';
  }
  out << std::left << std::setw(w) << "total" << prunable_neuron_count(model) << '\n';
  out << "parameters " << parameter_count(model) << '\n';
}

void cmd_scores(const RunConfig& cfg, std::ostream& log) {
  validate(cfg);
  const Model model = input_model(cfg);
  const Splits data = load_splits(cfg);
  PruneConfig prune = cfg.prune;
  prune.seed = cfg.seed;
  const Dataset sample = stats_subset(data.train, prune, 0);
  const ScoreTable table = compute_scores(model, cfg.prune.metric, sample);
  const fs::path path = cfg.out / ("scores_" + to_string(cfg.prune.metric) + ".csv");
  fs::create_directories(cfg.out);
  dump_scores(table, path);
  log << "wrote " << table.entries.size() << " scores to " << path.string() << "\n";
}

}  // namespace thinner::cli
