#include "vlmdrive/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "vlmdrive/harness.hpp"
#include "vlmdrive/ingest.hpp"

namespace vlmdrive {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(const char* format, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, value);
  return buf;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ReportError("cannot write " + path.string());
  out << content;
  if (!out.flush()) throw ReportError("write failed for " + path.string());
}

// Frame ids become file names.
std::string safe_name(const std::string& id) {
  std::string out;
  for (char c : id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    out.push_back(ok ? c : '_');
  }
  return out;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out.push_back(c);
  }
  return out + "\"";
}

double nice_step(double span) {
  const double raw = span / 6.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) return m * mag;
  }
  return 10.0 * mag;
}

constexpr std::array<const char*, 8> kPalette{"#d62728", "#1f77b4", "#2ca02c", "#9467bd",
                                              "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

RunData load_run(const fs::path& dir) {
  RunData run;
  run.dir = dir;
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw ReportError("run directory " + dir.string() + " has no manifest.json");
  const json manifest = json::parse(in, nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object()) throw ReportError("malformed " + manifest_path.string());
  try {
    run.run_id = manifest.at("run_id").get<std::string>();
    run.provider = provider_config_from_json(manifest.at("provider"));
    run.decision_record = manifest.at("decision_record");
  } catch (const std::exception& e) {
    throw ReportError(manifest_path.string() + ": " + e.what());
  }
  run.label = run.provider.model_name;
  try {
    run.results = read_results(dir / "results.jsonl");
    for (auto& f : read_scenarios(dir / "scenarios.jsonl")) run.ground_truth.emplace(f.frame_id, f.ground_truth);
  } catch (const std::exception& e) {
    throw ReportError(e.what());
  }
  return run;
}

Report build_report(std::vector<RunData>& runs, const ReportOptions& options) {
  if (runs.empty()) throw ReportError("no runs given");

  std::map<std::string, int> name_count;
  for (const auto& r : runs) ++name_count[r.label];
  for (auto& r : runs) {
    if (name_count[r.label] > 1) r.label += " (" + r.run_id + ")";
  }
  std::set<std::string> labels;
  for (const auto& r : runs) {
    if (!labels.insert(r.label).second) throw ReportError("run '" + r.run_id + "' was given twice");
  }

  if (!options.allow_mixed_decisions) {
    for (const auto& r : runs) {
      if (r.decision_record != runs.front().decision_record) {
        throw ReportError("runs '" + runs.front().run_id + "' and '" + r.run_id +
                          "' have different decision records (" + runs.front().decision_record.dump() + " vs " +
                          r.decision_record.dump() + "); pass --allow-mixed-decisions to compare them anyway");
      }
    }
  }

  std::set<std::string> universe;
  std::map<std::string, std::set<std::string>> valid;
  for (const auto& r : runs) {
    auto& ids = valid[r.label];
    for (const auto& result : r.results) {
      universe.insert(result.frame_id);
      if (result.parse_status != ParseStatus::kFailed && result.predicted) ids.insert(result.frame_id);
    }
  }

  Report report;
  report.filter = common_frame_filter(valid, universe);
  if (report.filter.retained.empty()) {
    std::string why = "no frame has a valid prediction from every run (" + std::to_string(universe.size()) +
                      " frames seen, all excluded)";
    throw ReportError(why);
  }
  for (const auto& r : runs) {
    report.summaries.push_back(summarize(r.label, r.results, r.ground_truth, r.provider, report.filter));
  }
  return report;
}

std::string render_efficiency_table(std::span<const RunSummary> summaries) {
  std::string out =
      "| Model | Infer Time (s) | Infer Cost (cents) | Input Tokens | Output Tokens |\n"
      "|---|---:|---:|---:|---:|\n";
  for (const auto& s : summaries) {
    out += "| " + s.model_name + " | " + fmt("%.1f", s.mean_latency) + " | " + fmt("%.2f", s.mean_cost) + " | " +
           fmt("%.0f", s.mean_input_tokens) + " | " + fmt("%.0f", s.mean_output_tokens) + " |\n";
  }
  return out;
}

std::string render_performance_table(std::span<const RunSummary> summaries) {
  std::string out =
      "| Model | FE (%) | FE Corr (%) | ADE 1s | ADE 2s | ADE 3s | ADE avg | FDE |\n"
      "|---|---:|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& s : summaries) {
    const auto& d = s.displacement;
    out += "| " + s.model_name + " | " + fmt("%.1f", s.fe_rate) + " | " + fmt("%.1f", s.fe_corr_rate) + " | " +
           fmt("%.2f", d.ade_1s) + " | " + fmt("%.2f", d.ade_2s) + " | " + fmt("%.2f", d.ade_3s) + " | " +
           fmt("%.2f", d.ade_avg) + " | " + fmt("%.2f", d.fde) + " |\n";
  }
  return out;
}

std::string render_report_markdown(const Report& report, std::span<const RunData> runs) {
  const auto& f = report.filter;
  std::string out = "# Benchmark report\n\n";
  out += "Runs:";
  for (const auto& r : runs) out += " " + r.run_id;
  out += "\n\n";
  out += "Efficiency covers every attempted frame. Displacement metrics cover only frames where every run "
         "produced a valid (strict or corrected) prediction. FE counts any output that needed correction or "
         "failed; FE Corr counts outputs that still failed after correction.\n\n";
  out += "## Efficiency (per frame)\n\n" + render_efficiency_table(report.summaries) + "\n";
  out += "## Performance\n\n" + render_performance_table(report.summaries) + "\n";
  out += "## Common-frame filter\n\n";
  out += std::to_string(f.retained.size()) + " of " + std::to_string(f.total) + " frames retained (" +
         fmt("%.1f", f.retention_rate) + "%).\n";
  if (!f.excluded.empty()) {
    out += "\n| Excluded frame | Failing runs |\n|---|---|\n";
    for (const auto& [id, failing] : f.excluded) {
      std::string who;
      for (const auto& m : failing) who += (who.empty() ? "" : ", ") + m;
      out += "| " + id + " | " + who + " |\n";
    }
  }
  return out;
}

std::string render_frame_csv(const Report& report, std::span<const RunData> runs) {
  const std::set<std::string> retained(report.filter.retained.begin(), report.filter.retained.end());
  std::map<std::string, std::vector<std::pair<const RunData*, const FrameResult*>>> rows;
  for (const auto& run : runs) {
    for (const auto& r : run.results) rows[r.frame_id].emplace_back(&run, &r);
  }
  std::string out =
      "frame_id,model,parse_status,error_class,retained,ade_1s,ade_2s,ade_3s,ade_avg,fde,latency_s,input_tokens,"
      "output_tokens,cost_cents\n";
  for (const auto& [id, entries] : rows) {
    for (const auto& [run, r] : entries) {
      const StageUsage u = r->total_usage();
      out += csv_field(id) + "," + csv_field(run->label) + "," + std::string(to_string(r->parse_status)) + "," +
             (r->error_class ? std::string(to_string(*r->error_class)) : std::string()) + "," +
             (retained.contains(id) ? "1" : "0") + ",";
      const auto gt = run->ground_truth.find(id);
      if (r->predicted && gt != run->ground_truth.end()) {
        const auto m = displacement_errors(*r->predicted, gt->second);
        out += fmt("%.6f", m.ade_1s) + "," + fmt("%.6f", m.ade_2s) + "," + fmt("%.6f", m.ade_3s) + "," +
               fmt("%.6f", m.ade_avg) + "," + fmt("%.6f", m.fde) + ",";
      } else {
        out += ",,,,,";
      }
      out += fmt("%.6f", r->total_latency) + "," + std::to_string(u.input_tokens) + "," +
             std::to_string(u.output_tokens) + "," + fmt("%.6f", estimate_cost(u.input_tokens, u.output_tokens, run->provider)) +
             "\n";
    }
  }
  return out;
}

std::string render_overlay_svg(const std::string& frame_id, const Trajectory& ground_truth,
                               std::span<const OverlayTrace> predictions) {
  // Extent over all points plus the ego origin.
  double min_x = 0.0, max_x = 0.0, min_y = 0.0, max_y = 0.0;
  auto grow = [&](const Trajectory& t) {
    for (Eigen::Index i = 0; i < t.points.rows(); ++i) {
      if (!std::isfinite(t.points(i, 0)) || !std::isfinite(t.points(i, 1))) continue;
      min_x = std::min(min_x, t.points(i, 0));
      max_x = std::max(max_x, t.points(i, 0));
      min_y = std::min(min_y, t.points(i, 1));
      max_y = std::max(max_y, t.points(i, 1));
    }
  };
  grow(ground_truth);
  for (const auto& p : predictions) grow(p.trajectory);
  const double span = std::max({max_x - min_x, max_y - min_y, 4.0}) + 2.0;
  const double cx = 0.5 * (min_x + max_x);
  const double cy = 0.5 * (min_y + max_y);
  const double x_lo = cx - span / 2, x_hi = cx + span / 2;
  const double y_lo = cy - span / 2, y_hi = cy + span / 2;

  constexpr double kSize = 480.0;
  constexpr double kMargin = 48.0;
  const double scale = (kSize - 2 * kMargin) / span;
  // Forward (+x) up, left (+y) to the left.
  auto sx = [&](double y) { return kMargin + (y_hi - y) * scale; };
  auto sy = [&](double x) { return kMargin + (x_hi - x) * scale; };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"520\" viewBox=\"0 0 480 520\">\n";
  out += "<rect width=\"480\" height=\"520\" fill=\"white\"/>\n";
  out += "<text x=\"8\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">frame " + xml_escape(frame_id) +
         " (ego frame, meters)</text>\n";

  const double step = nice_step(span);
  out += "<g stroke=\"#e0e0e0\" stroke-width=\"1\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#666\">\n";
  for (double v = std::ceil(x_lo / step) * step; v <= x_hi + 1e-9; v += step) {
    const double y = sy(v);
    out += "<line x1=\"" + fmt("%.2f", kMargin) + "\" y1=\"" + fmt("%.2f", y) + "\" x2=\"" +
           fmt("%.2f", kSize - kMargin) + "\" y2=\"" + fmt("%.2f", y) + "\"/>";
    out += "<text stroke=\"none\" x=\"" + fmt("%.2f", kMargin - 4) + "\" y=\"" + fmt("%.2f", y + 3) +
           "\" text-anchor=\"end\">" + fmt("%g", std::abs(v) < 1e-9 ? 0.0 : v) + "</text>\n";
  }
  for (double v = std::ceil(y_lo / step) * step; v <= y_hi + 1e-9; v += step) {
    const double x = sx(v);
    out += "<line x1=\"" + fmt("%.2f", x) + "\" y1=\"" + fmt("%.2f", kMargin) + "\" x2=\"" + fmt("%.2f", x) +
           "\" y2=\"" + fmt("%.2f", kSize - kMargin) + "\"/>";
    out += "<text stroke=\"none\" x=\"" + fmt("%.2f", x) + "\" y=\"" + fmt("%.2f", kSize - kMargin + 14) +
           "\" text-anchor=\"middle\">" + fmt("%g", std::abs(v) < 1e-9 ? 0.0 : v) + "</text>\n";
  }
  out += "</g>\n";
  out += "<text x=\"240\" y=\"" + fmt("%.0f", kSize - kMargin + 30) +
         "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">lateral y [m] (left +)</text>\n";
  out += "<text x=\"12\" y=\"240\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\" "
         "transform=\"rotate(-90 12 240)\">forward x [m]</text>\n";

  auto polyline = [&](const Trajectory& t, const char* color, const char* dash) {
    std::string pts = fmt("%.2f", sx(0.0)) + "," + fmt("%.2f", sy(0.0));
    for (Eigen::Index i = 0; i < t.points.rows(); ++i) {
      pts += " " + fmt("%.2f", sx(t.points(i, 1))) + "," + fmt("%.2f", sy(t.points(i, 0)));
    }
    std::string line = "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\"";
    if (dash[0] != '\0') line += " stroke-dasharray=\"" + std::string(dash) + "\"";
    return line + " points=\"" + pts + "\"/>\n";
  };

  out += polyline(ground_truth, "#000000", "");
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    out += polyline(predictions[i].trajectory, kPalette[i % kPalette.size()], "6,3");
  }
  out += "<circle cx=\"" + fmt("%.2f", sx(0.0)) + "\" cy=\"" + fmt("%.2f", sy(0.0)) + "\" r=\"4\" fill=\"#000\"/>\n";

  double ly = kSize + 14;
  double lx = 8;
  out += "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  out += "<line x1=\"" + fmt("%.0f", lx) + "\" y1=\"" + fmt("%.0f", ly) + "\" x2=\"" + fmt("%.0f", lx + 18) +
         "\" y2=\"" + fmt("%.0f", ly) + "\" stroke=\"#000\" stroke-width=\"2\"/><text x=\"" + fmt("%.0f", lx + 22) +
         "\" y=\"" + fmt("%.0f", ly + 4) + "\">ground truth</text>\n";
  lx += 110;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (lx > 400) {
      lx = 8;
      ly += 16;
    }
    out += "<line x1=\"" + fmt("%.0f", lx) + "\" y1=\"" + fmt("%.0f", ly) + "\" x2=\"" + fmt("%.0f", lx + 18) +
           "\" y2=\"" + fmt("%.0f", ly) + "\" stroke=\"" + kPalette[i % kPalette.size()] +
           "\" stroke-width=\"2\" stroke-dasharray=\"6,3\"/><text x=\"" + fmt("%.0f", lx + 22) + "\" y=\"" +
           fmt("%.0f", ly + 4) + "\">" + xml_escape(predictions[i].label) + "</text>\n";
    lx += 130;
  }
  out += "</g>\n</svg>\n";
  return out;
}

void write_report(const Report& report, std::span<const RunData> runs, const fs::path& out_dir,
                  const ReportOptions& options) {
  fs::create_directories(out_dir);
  write_text(out_dir / "report.md", render_report_markdown(report, runs));
  write_text(out_dir / "efficiency.md", render_efficiency_table(report.summaries));
  write_text(out_dir / "performance.md", render_performance_table(report.summaries));
  write_text(out_dir / "frames.csv", render_frame_csv(report, runs));

  json summary;
  summary["runs"] = json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    json entry = to_json(report.summaries[i]);
    entry["run_id"] = runs[i].run_id;
    entry["label"] = runs[i].label;
    entry["decision_record"] = runs[i].decision_record;
    summary["runs"].push_back(entry);
  }
  summary["filter"] = to_json(report.filter);
  summary["notes"] = {{"efficiency_frames", "all attempted frames"}, {"displacement_frames", "common-frame filter"}};
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");

  if (!options.overlays) return;
  const fs::path overlay_dir = out_dir / "overlays";
  fs::create_directories(overlay_dir);
  std::set<std::string> frame_ids;
  std::vector<std::map<std::string, const FrameResult*>> by_id(runs.size());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (const auto& r : runs[i].results) {
      frame_ids.insert(r.frame_id);
      by_id[i].emplace(r.frame_id, &r);
    }
  }
  for (const auto& id : frame_ids) {
    const Trajectory* gt = nullptr;
    std::vector<OverlayTrace> traces;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      if (const auto it = runs[i].ground_truth.find(id); it != runs[i].ground_truth.end() && gt == nullptr) {
        gt = &it->second;
      }
      if (const auto it = by_id[i].find(id); it != by_id[i].end() && it->second->predicted) {
        traces.push_back({runs[i].label, *it->second->predicted});
      }
    }
    if (gt == nullptr) continue;
    write_text(overlay_dir / (safe_name(id) + ".svg"), render_overlay_svg(id, *gt, traces));
  }
}

}  // namespace vlmdrive
