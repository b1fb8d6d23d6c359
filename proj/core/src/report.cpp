#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "thinner/error.hpp"
#include "thinner/pruning.hpp"

namespace thinner {

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::size_t> width_vector(const PruneReport& report, const Widths& widths) {
  std::vector<std::size_t> out;
  for (const auto& [layer, name] : report.layer_names) {
    const auto it = widths.find(layer);
    out.push_back(it == widths.end() ? 0 : it->second);
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::string report_csv(const PruneReport& report) {
  std::ostringstream out;
  out << "round,scheme,metric,total_before,total_after,acc_before_ft,acc_after_ft,stop_reason\n";
  const std::string stop = report.stop_reason ? to_string(*report.stop_reason) : "";
  const std::string prefix = "," + to_string(report.scheme) + "," + to_string(report.metric) + ",";
  const std::size_t initial = total_width(report.initial_widths);
  out << 0 << prefix << initial << ',' << initial << ',' << fixed(report.initial_accuracy) << ','
      << fixed(report.initial_accuracy) << ',' << (report.rounds.empty() ? stop : "") << '\n';
  for (std::size_t i = 0; i < report.rounds.size(); ++i) {
    const PruneRound& r = report.rounds[i];
    out << r.round << prefix << r.total_before << ',' << r.total_after << ','
        << fixed(r.acc_before_ft) << ',' << fixed(r.acc_after_ft) << ','
        << (i + 1 == report.rounds.size() ? stop : "") << '\n';
  }
  return out.str();
}

std::string report_json(const PruneReport& report) {
  using nlohmann::ordered_json;
  ordered_json doc;
  doc["scheme"] = to_string(report.scheme);
  doc["metric"] = to_string(report.metric);
  doc["ratio"] = report.ratio;
  doc["stop_reason"] =
      report.stop_reason ? ordered_json(to_string(*report.stop_reason)) : ordered_json(nullptr);
  ordered_json names = ordered_json::array();
  ordered_json indices = ordered_json::array();
  for (const auto& [layer, name] : report.layer_names) {
    names.push_back(name);
    indices.push_back(layer);
  }
  doc["layer_names"] = names;
  doc["layer_indices"] = indices;
  doc["initial"] = {{"total", total_width(report.initial_widths)},
                    {"widths", width_vector(report, report.initial_widths)},
                    {"accuracy", report.initial_accuracy}};
  ordered_json rounds = ordered_json::array();
  for (const PruneRound& r : report.rounds) {
    Widths removed;
    for (const auto& [layer, name] : report.layer_names) {
      const auto it = r.removed.find(layer);
      removed[layer] = it == r.removed.end() ? 0 : it->second;
    }
    rounds.push_back({{"round", r.round},
                      {"total_before", r.total_before},
                      {"total_after", r.total_after},
                      {"removed", width_vector(report, removed)},
                      {"widths", width_vector(report, r.widths_after)},
                      {"acc_before_ft", r.acc_before_ft},
                      {"acc_after_ft", r.acc_after_ft},
                      {"finetune_epochs", r.finetune_epochs}});
  }
  doc["rounds"] = rounds;
  return doc.dump(2) + "\n";
}

void write_report_files(const PruneReport& report, const std::filesystem::path& csv_path,
                        const std::filesystem::path& json_path) {
  write_text(csv_path, report_csv(report));
  write_text(json_path, report_json(report));
}

}  // namespace thinner
