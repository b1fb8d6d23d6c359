#include "run_config.hpp"

#include <fstream>
#include <set>

namespace thinner::cli {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

std::string path_of(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

template <typename Fn>
void with(const json& obj, const std::string& key, Fn&& fn) {
  if (auto it = obj.find(key); it != obj.end()) fn(*it);
}

std::uint64_t get_unsigned(const json& v, const std::string& name) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ConfigError(name + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

double get_double(const json& v, const std::string& name) {
  if (!v.is_number()) throw ConfigError(name + " must be a number");
  return v.get<double>();
}

std::string get_string(const json& v, const std::string& name) {
  if (!v.is_string()) throw ConfigError(name + " must be a string");
  return v.get<std::string>();
}

void read_train(const json& obj, TrainConfig& cfg, const std::string& where) {
  check_keys(obj, {"learning_rate", "momentum", "batch_size", "epochs"}, where);
  with(obj, "learning_rate", [&](const json& v) { cfg.learning_rate = get_double(v, path_of(where, "learning_rate")); });
  with(obj, "momentum", [&](const json& v) { cfg.momentum = get_double(v, path_of(where, "momentum")); });
  with(obj, "batch_size", [&](const json& v) { cfg.batch_size = get_unsigned(v, path_of(where, "batch_size")); });
  with(obj, "epochs", [&](const json& v) { cfg.epochs = get_unsigned(v, path_of(where, "epochs")); });
}

json train_json(const TrainConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"momentum", cfg.momentum},
          {"batch_size", cfg.batch_size},
          {"epochs", cfg.epochs}};
}

void read_data(const json& obj, DataSource& data) {
  check_keys(obj,
             {"source", "task", "channels", "height", "width", "classes", "noise", "samples",
              "train_images", "train_labels", "val_images", "val_labels", "val_fraction", "seed"},
             "data");
  const std::string source = obj.contains("source") ? get_string(obj["source"], "data.source") : "synthetic";
  if (source == "synthetic") {
    data.kind = DataSource::Kind::kSynthetic;
    for (const char* key : {"train_images", "train_labels", "val_images", "val_labels"}) {
      if (obj.contains(key)) throw ConfigError(std::string("data.") + key + " needs source \"idx\"");
    }
  } else if (source == "idx") {
    data.kind = DataSource::Kind::kIdx;
    for (const char* key : {"task", "channels", "height", "width", "classes", "noise", "samples"}) {
      if (obj.contains(key)) throw ConfigError(std::string("data.") + key + " needs source \"synthetic\"");
    }
  } else {
    throw ConfigError("data.source must be \"synthetic\" or \"idx\", got \"" + source + "\"");
  }
  with(obj, "task", [&](const json& v) { data.task.name = get_string(v, "data.task"); });
  with(obj, "channels", [&](const json& v) { data.task.channels = get_unsigned(v, "data.channels"); });
  with(obj, "height", [&](const json& v) { data.task.height = get_unsigned(v, "data.height"); });
  with(obj, "width", [&](const json& v) { data.task.width = get_unsigned(v, "data.width"); });
  with(obj, "classes", [&](const json& v) { data.task.classes = static_cast<int>(get_unsigned(v, "data.classes")); });
  with(obj, "noise", [&](const json& v) { data.task.noise = get_double(v, "data.noise"); });
  with(obj, "samples", [&](const json& v) { data.samples = get_unsigned(v, "data.samples"); });
  with(obj, "train_images", [&](const json& v) { data.train_images = get_string(v, "data.train_images"); });
  with(obj, "train_labels", [&](const json& v) { data.train_labels = get_string(v, "data.train_labels"); });
  with(obj, "val_images", [&](const json& v) { data.val_images = get_string(v, "data.val_images"); });
  with(obj, "val_labels", [&](const json& v) { data.val_labels = get_string(v, "data.val_labels"); });
  with(obj, "val_fraction", [&](const json& v) { data.val_fraction = get_double(v, "data.val_fraction"); });
  with(obj, "seed", [&](const json& v) { data.seed = get_unsigned(v, "data.seed"); });
}

json data_json(const DataSource& data) {
  json out = json::object();
  if (data.kind == DataSource::Kind::kSynthetic) {
    out = {{"source", "synthetic"},
           {"task", data.task.name},
           {"channels", data.task.channels},
           {"height", data.task.height},
           {"width", data.task.width},
           {"classes", data.task.classes},
           {"noise", data.task.noise},
           {"samples", data.samples}};
  } else {
    out = {{"source", "idx"},
           {"train_images", data.train_images.string()},
           {"train_labels", data.train_labels.string()}};
    if (!data.val_images.empty()) {
      out["val_images"] = data.val_images.string();
      out["val_labels"] = data.val_labels.string();
    }
  }
  out["val_fraction"] = data.val_fraction;
  if (data.seed) out["seed"] = *data.seed;
  return out;
}

LayerSpec read_layer(const json& obj, std::size_t i) {
  const std::string where = "model[" + std::to_string(i) + "]";
  if (!obj.is_object() || !obj.contains("type")) throw ConfigError(where + " needs a \"type\"");
  LayerSpec spec;
  try {
    spec.kind = layer_kind_from_string(get_string(obj["type"], where + ".type"));
  } catch (const ValueError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  std::set<std::string> allowed{"type", "name"};
  switch (spec.kind) {
    case LayerKind::kConv2D:
      allowed.insert({"units", "kernel", "stride", "padding"});
      break;
    case LayerKind::kDense:
      allowed.insert("units");
      break;
    case LayerKind::kMaxPool2D:
      allowed.insert("pool");
      break;
    default:
      break;
  }
  check_keys(obj, allowed, where);
  if (spec.kind == LayerKind::kConv2D || spec.kind == LayerKind::kDense) {
    if (!obj.contains("units")) throw ConfigError(where + " needs \"units\"");
  }
  with(obj, "name", [&](const json& v) { spec.name = get_string(v, where + ".name"); });
  with(obj, "units", [&](const json& v) { spec.units = get_unsigned(v, where + ".units"); });
  with(obj, "kernel", [&](const json& v) { spec.kernel = get_unsigned(v, where + ".kernel"); });
  with(obj, "stride", [&](const json& v) { spec.stride = get_unsigned(v, where + ".stride"); });
  with(obj, "padding", [&](const json& v) { spec.padding = get_unsigned(v, where + ".padding"); });
  with(obj, "pool", [&](const json& v) { spec.pool = get_unsigned(v, where + ".pool"); });
  return spec;
}

json layer_json(const LayerSpec& spec) {
  json out{{"type", to_string(spec.kind)}};
  if (!spec.name.empty()) out["name"] = spec.name;
  switch (spec.kind) {
    case LayerKind::kConv2D:
      out["units"] = spec.units;
      out["kernel"] = spec.kernel;
      out["stride"] = spec.stride;
      out["padding"] = spec.padding;
      break;
    case LayerKind::kDense:
      out["units"] = spec.units;
      break;
    case LayerKind::kMaxPool2D:
      out["pool"] = spec.pool;
      break;
    default:
      break;
  }
  return out;
}

void read_prune(const json& obj, RunConfig& cfg) {
  check_keys(obj,
             {"scheme", "metric", "ratio", "target_accuracy", "max_rounds", "min_neurons_per_layer",
              "stats_samples", "finetune"},
             "prune");
  PruneConfig& p = cfg.prune;
  try {
    with(obj, "scheme", [&](const json& v) { cfg.scheme = scheme_from_string(get_string(v, "prune.scheme")); });
    with(obj, "metric", [&](const json& v) { p.metric = metric_from_string(get_string(v, "prune.metric")); });
  } catch (const ConfigError&) {
    throw;
  } catch (const ValueError& e) {
    throw ConfigError(std::string("prune: ") + e.what());
  }
  with(obj, "ratio", [&](const json& v) { p.ratio = get_double(v, "prune.ratio"); });
  with(obj, "target_accuracy", [&](const json& v) { p.target_accuracy = get_double(v, "prune.target_accuracy"); });
  with(obj, "max_rounds", [&](const json& v) { p.max_rounds = get_unsigned(v, "prune.max_rounds"); });
  with(obj, "min_neurons_per_layer",
       [&](const json& v) { p.min_neurons_per_layer = get_unsigned(v, "prune.min_neurons_per_layer"); });
  with(obj, "stats_samples", [&](const json& v) { p.stats_samples = get_unsigned(v, "prune.stats_samples"); });
  with(obj, "finetune", [&](const json& v) { read_train(v, p.finetune, "prune.finetune"); });
}

}  // namespace

std::vector<LayerSpec> default_model_spec() {
  auto layer = [](LayerKind kind, std::size_t units = 0) {
    LayerSpec s;
    s.kind = kind;
    s.units = units;
    s.padding = kind == LayerKind::kConv2D ? 1 : 0;
    return s;
  };
  return {layer(LayerKind::kConv2D, 16), layer(LayerKind::kReLU),  layer(LayerKind::kMaxPool2D),
          layer(LayerKind::kConv2D, 32), layer(LayerKind::kReLU),  layer(LayerKind::kMaxPool2D),
          layer(LayerKind::kFlatten),    layer(LayerKind::kDense, 128), layer(LayerKind::kReLU),
          layer(LayerKind::kDense, 64),  layer(LayerKind::kReLU),  layer(LayerKind::kDense, 2),
          layer(LayerKind::kSoftmaxCrossEntropy)};
}

RunConfig parse_run_config(const json& doc) {
  check_keys(doc, {"seed", "out", "model_path", "data", "model", "train", "prune"}, "config");
  RunConfig cfg;
  cfg.model = default_model_spec();
  with(doc, "seed", [&](const json& v) { cfg.seed = get_unsigned(v, "seed"); });
  with(doc, "out", [&](const json& v) { cfg.out = get_string(v, "out"); });
  with(doc, "model_path", [&](const json& v) { cfg.model_path = get_string(v, "model_path"); });
  with(doc, "data", [&](const json& v) { read_data(v, cfg.data); });
  with(doc, "model", [&](const json& v) {
    if (!v.is_array() || v.empty()) throw ConfigError("model must be a non-empty array of layers");
    cfg.model.clear();
    for (std::size_t i = 0; i < v.size(); ++i) cfg.model.push_back(read_layer(v[i], i));
  });
  with(doc, "train", [&](const json& v) { read_train(v, cfg.train, "train"); });
  with(doc, "prune", [&](const json& v) { read_prune(v, cfg); });
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

json to_json(const RunConfig& cfg) {
  json model = json::array();
  for (const auto& spec : cfg.model) model.push_back(layer_json(spec));
  json out{{"seed", cfg.seed},
           {"out", cfg.out.string()},
           {"data", data_json(cfg.data)},
           {"model", model},
           {"train", train_json(cfg.train)},
           {"prune",
            {{"scheme", to_string(cfg.scheme)},
             {"metric", to_string(cfg.prune.metric)},
             {"ratio", cfg.prune.ratio},
             {"target_accuracy", cfg.prune.target_accuracy},
             {"max_rounds", cfg.prune.max_rounds},
             {"min_neurons_per_layer", cfg.prune.min_neurons_per_layer},
             {"stats_samples", cfg.prune.stats_samples},
             {"finetune", train_json(cfg.prune.finetune)}}}};
  if (cfg.model_path) out["model_path"] = cfg.model_path->string();
  return out;
}

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out = *o.out;
  if (o.model) cfg.model_path = *o.model;
  try {
    if (o.metric) cfg.prune.metric = metric_from_string(*o.metric);
    if (o.scheme) cfg.scheme = scheme_from_string(*o.scheme);
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
  if (o.ratio) cfg.prune.ratio = *o.ratio;
  if (o.target) cfg.prune.target_accuracy = *o.target;
  if (o.max_rounds) cfg.prune.max_rounds = *o.max_rounds;
}

void validate(const RunConfig& cfg) {
  try {
    cfg.train.validate();
    cfg.prune.validate();
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
  if (cfg.out.empty()) throw ConfigError("out must not be empty");
  const DataSource& d = cfg.data;
  if (!(d.val_fraction > 0.0 && d.val_fraction < 1.0)) {
    throw ConfigError("data.val_fraction must be in (0, 1)");
  }
  if (d.kind == DataSource::Kind::kSynthetic) {
    if (d.task.name != "bars" && d.task.name != "blobs") {
      throw ConfigError("data.task must be \"bars\" or \"blobs\"");
    }
    if (d.task.name == "bars" && d.task.classes != 2) throw ConfigError("the bars task has exactly 2 classes");
    if (d.task.classes < 2) throw ConfigError("data.classes must be at least 2");
    if (d.task.channels == 0 || d.task.height == 0 || d.task.width == 0) {
      throw ConfigError("data.channels, data.height and data.width must be positive");
    }
    if (!(d.task.noise >= 0.0 && d.task.noise <= 1.0)) throw ConfigError("data.noise must be in [0, 1]");
    if (d.samples < 2) throw ConfigError("data.samples must be at least 2");
  } else {
    if (d.train_images.empty() || d.train_labels.empty()) {
      throw ConfigError("idx data needs train_images and train_labels");
    }
    if (d.val_images.empty() != d.val_labels.empty()) {
      throw ConfigError("val_images and val_labels must be given together");
    }
  }
}

}  // namespace thinner::cli
