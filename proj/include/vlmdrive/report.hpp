#pragma once

// Cross-run reporting: common-frame filtering, efficiency and performance
// tables, per-frame CSV and trajectory overlays.

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vlmdrive/domain.hpp"
#include "vlmdrive/metrics.hpp"
#include "vlmdrive/vlm_client.hpp"

namespace vlmdrive {

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunData {
  std::filesystem::path dir;
  std::string run_id;
  std::string label;  // model name, or "model (run_id)" when names collide
  ProviderConfig provider;
  nlohmann::json decision_record;
  std::vector<FrameResult> results;
  std::map<std::string, Trajectory> ground_truth;
};

/// Reads manifest.json, results.jsonl and scenarios.jsonl from a run directory.
RunData load_run(const std::filesystem::path& dir);

struct ReportOptions {
  bool allow_mixed_decisions = false;
  bool overlays = true;
};

struct Report {
  FilterReport filter;
  std::vector<RunSummary> summaries;  // same order as the runs
};

/// Labels are disambiguated in place. Throws ReportError when decision
/// records differ (unless allowed) or when no frame survives the filter.
Report build_report(std::vector<RunData>& runs, const ReportOptions& options = {});

std::string render_efficiency_table(std::span<const RunSummary> summaries);
std::string render_performance_table(std::span<const RunSummary> summaries);
std::string render_report_markdown(const Report& report, std::span<const RunData> runs);
std::string render_frame_csv(const Report& report, std::span<const RunData> runs);

struct OverlayTrace {
  std::string label;
  Trajectory trajectory;
};

/// Ego-frame plot: forward (+x) points up, left (+y) points left; grid in meters.
std::string render_overlay_svg(const std::string& frame_id, const Trajectory& ground_truth,
                               std::span<const OverlayTrace> predictions);

/// Writes report.md, efficiency.md, performance.md, summary.json, frames.csv
/// and overlays/<frame_id>.svg under `out_dir`.
void write_report(const Report& report, std::span<const RunData> runs, const std::filesystem::path& out_dir,
                  const ReportOptions& options = {});

}  // namespace vlmdrive
